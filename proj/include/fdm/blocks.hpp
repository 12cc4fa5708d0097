#ifndef FDM_BLOCKS_HPP
#define FDM_BLOCKS_HPP

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "fdm/kernels.hpp"
#include "fdm/tensor.hpp"

// Composite inference blocks. Each block owns its parameters, runs a pure
// forward pass, and registers every parameter in a flat name -> storage list
// so initialization, serialization, and counting all share one traversal.

namespace fdm {

inline uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

enum class ParamKind : uint8_t { Learnable, RunningStat };
enum class InitKind : uint8_t { Uniform, Ones, Zeros };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;  // exactly one of tensor / vec is set
  std::vector<T>* vec = nullptr;
  ParamKind kind = ParamKind::Learnable;
  InitKind init = InitKind::Uniform;

  int64_t numel() const { return tensor ? tensor->numel() : static_cast<int64_t>(vec->size()); }
};

// Seeds each parameter from (seed ^ hash(name)), so values depend only on the
// parameter's name, never on traversal order.
template <typename T>
void init_params(std::vector<ParamRef<T>>& refs, uint64_t seed) {
  for (auto& r : refs) {
    Rng rng(seed ^ name_hash(r.name));
    T* p = r.tensor ? r.tensor->data() : r.vec->data();
    const int64_t n = r.numel();
    switch (r.init) {
      case InitKind::Uniform:
        for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.next_uniform(-0.1, 0.1));
        break;
      case InitKind::Ones:
        std::fill(p, p + n, T(1));
        break;
      case InitKind::Zeros:
        std::fill(p, p + n, T(0));
        break;
    }
  }
}

// Learnable scalars only; running statistics are state, not parameters.
template <typename T>
int64_t learnable_count(const std::vector<ParamRef<T>>& refs) {
  int64_t total = 0;
  for (const auto& r : refs)
    if (r.kind == ParamKind::Learnable) total += r.numel();
  return total;
}

// ---- primitive layers --------------------------------------------------------

// conv (no bias) + batchnorm + optional silu, the standard fused stack
template <typename T>
struct ConvBnSilu {
  int ci, co, k, stride, groups;
  bool act;
  Tensor<T> weight;
  BnParams<T> bn;

  ConvBnSilu(int ci_, int co_, int k_, int stride_ = 1, int groups_ = 1, bool act_ = true)
      : ci(ci_),
        co(co_),
        k(k_),
        stride(stride_),
        groups(groups_),
        act(act_),
        weight(Shape{co_, ci_ / groups_, k_, k_}, T(0)) {
    bn.gamma.assign(static_cast<size_t>(co_), T(1));
    bn.beta.assign(static_cast<size_t>(co_), T(0));
    bn.mean.assign(static_cast<size_t>(co_), T(0));
    bn.var.assign(static_cast<size_t>(co_), T(1));
  }

  Conv2dAttrs attrs() const { return Conv2dAttrs{stride, k / 2, groups}; }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = batchnorm_infer(conv2d(x, weight, {}, attrs()), bn);
    return act ? silu(y) : y;
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    out.push_back({p + ".weight", &weight, nullptr, ParamKind::Learnable, InitKind::Uniform});
    out.push_back({p + ".bn.gamma", nullptr, &bn.gamma, ParamKind::Learnable, InitKind::Ones});
    out.push_back({p + ".bn.beta", nullptr, &bn.beta, ParamKind::Learnable, InitKind::Zeros});
    out.push_back({p + ".bn.mean", nullptr, &bn.mean, ParamKind::RunningStat, InitKind::Zeros});
    out.push_back({p + ".bn.var", nullptr, &bn.var, ParamKind::RunningStat, InitKind::Ones});
  }
};

// bare convolution, optional bias, no norm, no activation
template <typename T>
struct PlainConv {
  int ci, co, k, stride, padding;
  bool has_bias;
  Tensor<T> weight;
  std::vector<T> bias;

  PlainConv(int ci_, int co_, int k_, int stride_ = 1, int padding_ = 0, bool bias_ = true)
      : ci(ci_),
        co(co_),
        k(k_),
        stride(stride_),
        padding(padding_),
        has_bias(bias_),
        weight(Shape{co_, ci_, k_, k_}, T(0)) {
    if (bias_) bias.assign(static_cast<size_t>(co_), T(0));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, Conv2dAttrs{stride, padding, 1});
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    out.push_back({p + ".weight", &weight, nullptr, ParamKind::Learnable, InitKind::Uniform});
    if (has_bias)
      out.push_back({p + ".bias", nullptr, &bias, ParamKind::Learnable, InitKind::Uniform});
  }
};

// ---- aggregation blocks --------------------------------------------------------

template <typename T>
struct Bottleneck {
  bool shortcut;
  ConvBnSilu<T> cv1, cv2;

  Bottleneck(int c, bool shortcut_) : shortcut(shortcut_), cv1(c, c, 3), cv2(c, c, 3) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = cv2.forward(cv1.forward(x));
    return shortcut ? add(x, y) : y;
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    cv1.collect(p + ".cv1", out);
    cv2.collect(p + ".cv2", out);
  }
};

// split half the stem, chain n bottlenecks, concat every intermediate
template <typename T>
struct C2f {
  int ci, co, n, hidden;
  bool shortcut;
  ConvBnSilu<T> cv1, cv2;
  std::vector<Bottleneck<T>> blocks;

  C2f(int ci_, int co_, int n_, bool shortcut_)
      : ci(ci_),
        co(co_),
        n(n_),
        hidden(co_ / 2),
        shortcut(shortcut_),
        cv1(ci_, 2 * (co_ / 2), 1),
        cv2((2 + n_) * (co_ / 2), co_, 1) {
    for (int i = 0; i < n_; ++i) blocks.emplace_back(hidden, shortcut_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    std::vector<Tensor<T>> ys = split(cv1.forward(x), {hidden, hidden}, 1);
    for (const auto& b : blocks) ys.push_back(b.forward(ys.back()));
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& y : ys) ptrs.push_back(&y);
    return cv2.forward(concat(ptrs, 1));
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    cv1.collect(p + ".cv1", out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(p + ".m" + std::to_string(i), out);
    cv2.collect(p + ".cv2", out);
  }
};

// reduce, three chained 5x5 max pools, concat all four stages, fuse
template <typename T>
struct Sppf {
  int ci, co, hidden;
  ConvBnSilu<T> cv1, cv2;

  Sppf(int ci_, int co_)
      : ci(ci_), co(co_), hidden(ci_ / 2), cv1(ci_, ci_ / 2, 1), cv2(4 * (ci_ / 2), co_, 1) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> x1 = cv1.forward(x);
    Tensor<T> p1 = max_pool(x1, 5, 1, 2);
    Tensor<T> p2 = max_pool(p1, 5, 1, 2);
    Tensor<T> p3 = max_pool(p2, 5, 1, 2);
    return cv2.forward(concat<T>({&x1, &p1, &p2, &p3}, 1));
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    cv1.collect(p + ".cv1", out);
    cv2.collect(p + ".cv2", out);
  }
};

// ---- partial convolution ---------------------------------------------------------

// 3x3 conv over the first cp channels; channels [cp, c) pass through verbatim.
template <typename T>
struct PConv {
  int c, cp;
  Tensor<T> weight;  // (cp, cp, 3, 3), no bias

  PConv(int c_, int cp_) : c(c_), cp(checked(c_, cp_)), weight(Shape{cp_, cp_, 3, 3}, T(0)) {}

  static int checked(int c, int cp) {
    if (cp < 1 || cp > c)
      throw ArgError("pconv: conv channels " + std::to_string(cp) + " outside [1, " +
                     std::to_string(c) + "]");
    return cp;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (cp == c) return conv2d(x, weight, {}, Conv2dAttrs{1, 1, 1});
    std::vector<Tensor<T>> parts = split(x, {cp, c - cp}, 1);
    Tensor<T> head = conv2d(parts[0], weight, {}, Conv2dAttrs{1, 1, 1});
    return concat(head, parts[1], 1);
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    out.push_back({p + ".weight", &weight, nullptr, ParamKind::Learnable, InitKind::Uniform});
  }
};

// partial conv for spatial mixing, then a 1x1 expand / 1x1 project pair, with
// a residual from the block input
template <typename T>
struct FastBlock {
  int c;
  PConv<T> pconv;
  ConvBnSilu<T> expand;   // 1x1, c -> 2c
  PlainConv<T> project;   // 1x1, 2c -> c, bias-free

  explicit FastBlock(int c_)
      : c(c_), pconv(c_, c_ / 4), expand(c_, 2 * c_, 1), project(2 * c_, c_, 1, 1, 0, false) {
    if (c_ % 4 != 0) throw ArgError("fast block: channels must divide by 4, got " + std::to_string(c_));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add(x, project.forward(expand.forward(pconv.forward(x))));
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    pconv.collect(p + ".pconv", out);
    expand.collect(p + ".expand", out);
    project.collect(p + ".project", out);
  }
};

// C2f skeleton with the bottlenecks swapped for fast blocks
template <typename T>
struct FastC2f {
  int ci, co, n, hidden;
  ConvBnSilu<T> cv1, cv2;
  std::vector<FastBlock<T>> blocks;

  FastC2f(int ci_, int co_, int n_)
      : ci(ci_),
        co(co_),
        n(n_),
        hidden(co_ / 2),
        cv1(ci_, 2 * (co_ / 2), 1),
        cv2((2 + n_) * (co_ / 2), co_, 1) {
    for (int i = 0; i < n_; ++i) blocks.emplace_back(hidden);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    std::vector<Tensor<T>> ys = split(cv1.forward(x), {hidden, hidden}, 1);
    for (const auto& b : blocks) ys.push_back(b.forward(ys.back()));
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& y : ys) ptrs.push_back(&y);
    return cv2.forward(concat(ptrs, 1));
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    cv1.collect(p + ".cv1", out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(p + ".m" + std::to_string(i), out);
    cv2.collect(p + ".cv2", out);
  }
};

// ---- content-aware upsampling ------------------------------------------------------

// Point-wise offset prediction ("lp" style): a 1x1 conv yields 2*groups*scale^2
// offset channels, scaled by 0.25 and shifted by the static sub-pixel grid;
// each group of channels is then bilinearly gathered at its own positions.
// With the offset conv at zero this reduces exactly to bilinear resizing.
template <typename T>
struct Dysample {
  int c, scale, groups;
  T range_factor;
  PlainConv<T> offset;  // 1x1: c -> 2*groups*scale^2, with bias

  explicit Dysample(int c_, int scale_ = 2, int groups_ = 4)
      : c(c_),
        scale(scale_),
        groups(groups_),
        range_factor(T(0.25)),
        offset(c_, 2 * groups_ * scale_ * scale_, 1, 1, 0, true) {
    if (c_ % groups_ != 0)
      throw ArgError("dysample: channels " + std::to_string(c_) + " not divisible by groups " +
                     std::to_string(groups_));
  }

  // static shift for sub-cell index i: (i - (s-1)/2) / s
  T init_shift(int i) const {
    return (static_cast<T>(i) - static_cast<T>(scale - 1) / T(2)) / static_cast<T>(scale);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    const Shape& s = x.shape();
    Tensor<T> off = offset.forward(x);  // (n, 2*g*s^2, h, w)
    const int s2 = scale * scale;
    const int gs2 = groups * s2;
    Grid<T> grid(s.n * groups, s.h * scale, s.w * scale);
    for (int64_t b = 0; b < s.n; ++b)
      for (int k = 0; k < groups; ++k)
        for (int64_t iy = 0; iy < s.h; ++iy)
          for (int64_t ix = 0; ix < s.w; ++ix)
            for (int i = 0; i < scale; ++i)
              for (int j = 0; j < scale; ++j) {
                const int sub = k * s2 + i * scale + j;
                const T ox = off.at(b, sub, iy, ix) * range_factor + init_shift(j);
                const T oy = off.at(b, gs2 + sub, iy, ix) * range_factor + init_shift(i);
                const T px = static_cast<T>(ix) + T(0.5) + ox;
                const T py = static_cast<T>(iy) + T(0.5) + oy;
                grid.x(b * groups + k, iy * scale + i, ix * scale + j) =
                    T(2) * px / static_cast<T>(s.w) - T(1);
                grid.y(b * groups + k, iy * scale + i, ix * scale + j) =
                    T(2) * py / static_cast<T>(s.h) - T(1);
              }
    Tensor<T> folded = x.reshaped(Shape{s.n * groups, s.c / groups, s.h, s.w});
    Tensor<T> sampled = grid_sample_bilinear(folded, grid);
    return std::move(sampled).reshaped_inplace(Shape{s.n, s.c, s.h * scale, s.w * scale});
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    offset.collect(p + ".offset", out);
  }
};

// ---- grouped spatial attention --------------------------------------------------------

// Channels fold into `groups` independent slabs of c/groups. Per slab: row and
// column profiles gate the input, a group norm re-centers it, and two
// softmax-weighted channel summaries cross-multiply with the raw feature maps
// to produce one sigmoid score per pixel that rescales the input.
template <typename T>
struct Ema {
  int c, groups, cg;
  PlainConv<T> conv1;  // 1x1 on the concatenated row/column profiles
  PlainConv<T> conv3;  // 3x3 local branch
  std::vector<T> gn_gamma, gn_beta;

  explicit Ema(int c_, int groups_ = 32)
      : c(c_),
        groups(groups_),
        cg(c_ / groups_),
        conv1(c_ / groups_, c_ / groups_, 1, 1, 0, true),
        conv3(c_ / groups_, c_ / groups_, 3, 1, 1, true) {
    if (groups_ < 1 || c_ % groups_ != 0)
      throw ArgError("ema: channels " + std::to_string(c_) + " not divisible by groups " +
                     std::to_string(groups_));
    gn_gamma.assign(static_cast<size_t>(cg), T(1));
    gn_beta.assign(static_cast<size_t>(cg), T(0));
  }

  // per-slab attention vectors and pixel scores, exposed for invariant checks
  struct Trace {
    Tensor<T> a1, a2;     // (n*groups, 1, 1, cg), each softmax-normalized
    Tensor<T> scores;     // (n*groups, 1, h, w), post-sigmoid
  };

  Tensor<T> forward(const Tensor<T>& x, Trace* trace = nullptr) const {
    const Shape& s = x.shape();
    const int64_t bg = s.n * groups;
    Tensor<T> gx = x.reshaped(Shape{bg, cg, s.h, s.w});

    Tensor<T> xh = avg_pool_w(gx);                 // (bg, cg, h, 1)
    Tensor<T> xw = transpose_hw(avg_pool_h(gx));   // (bg, cg, w, 1)
    Tensor<T> hw = conv1.forward(concat(xh, xw, 2));
    std::vector<Tensor<T>> gates = split(hw, {s.h, s.w}, 2);
    Tensor<T> gated = mul(mul(gx, sigmoid(gates[0])), sigmoid(transpose_hw(gates[1])));
    Tensor<T> x1 = group_norm(gated, cg, gn_gamma, gn_beta);
    Tensor<T> x2 = conv3.forward(gx);

    const int64_t hwn = s.h * s.w;
    Tensor<T> a1 = softmax(global_avg_pool(x1).reshaped(Shape{bg, 1, 1, cg}), 3);
    Tensor<T> a2 = softmax(global_avg_pool(x2).reshaped(Shape{bg, 1, 1, cg}), 3);
    Tensor<T> f2 = x2.reshaped(Shape{bg, 1, cg, hwn});
    Tensor<T> f1 = x1.reshaped(Shape{bg, 1, cg, hwn});
    Tensor<T> gate = sigmoid(add(matmul_batched(a1, f2), matmul_batched(a2, f1))
                                 .reshaped_inplace(Shape{bg, 1, s.h, s.w}));
    if (trace) *trace = Trace{a1, a2, gate};
    Tensor<T> out = mul(gx, gate);
    return std::move(out).reshaped_inplace(s);
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    conv1.collect(p + ".conv1", out);
    conv3.collect(p + ".conv3", out);
    out.push_back({p + ".gn.gamma", nullptr, &gn_gamma, ParamKind::Learnable, InitKind::Ones});
    out.push_back({p + ".gn.beta", nullptr, &gn_beta, ParamKind::Learnable, InitKind::Zeros});
  }
};

// ---- detection head ---------------------------------------------------------------

// One pyramid level: two stacked 3x3 conv branches (box regression bins and
// class logits) concatenated channel-wise, optionally behind an attention
// stage. Branch widths are shared across levels by the caller.
template <typename T>
struct HeadLevel {
  int c_in, c2, c3, nc, reg_max;
  std::optional<Ema<T>> ema;
  ConvBnSilu<T> box0, box1;
  PlainConv<T> box2;
  ConvBnSilu<T> cls0, cls1;
  PlainConv<T> cls2;

  HeadLevel(int c_in_, int c2_, int c3_, int nc_, int reg_max_, int ema_groups = 0)
      : c_in(c_in_),
        c2(c2_),
        c3(c3_),
        nc(nc_),
        reg_max(reg_max_),
        box0(c_in_, c2_, 3),
        box1(c2_, c2_, 3),
        box2(c2_, 4 * reg_max_, 1, 1, 0, true),
        cls0(c_in_, c3_, 3),
        cls1(c3_, c3_, 3),
        cls2(c3_, nc_, 1, 1, 0, true) {
    if (ema_groups > 0) ema.emplace(c_in_, ema_groups);
  }

  // shared branch widths, derived from the first (finest) level's channels
  static int box_width(int ch0, int reg_max) { return std::max({16, ch0 / 4, 4 * reg_max}); }
  static int cls_width(int ch0, int nc) { return std::max(ch0, std::min(nc, 100)); }

  Tensor<T> forward(const Tensor<T>& x) const {
    const Tensor<T>* in = &x;
    Tensor<T> attended;
    if (ema) {
      attended = ema->forward(x);
      in = &attended;
    }
    Tensor<T> b = box2.forward(box1.forward(box0.forward(*in)));
    Tensor<T> c = cls2.forward(cls1.forward(cls0.forward(*in)));
    return concat(b, c, 1);
  }

  void collect(const std::string& p, std::vector<ParamRef<T>>& out) {
    if (ema) ema->collect(p + ".ema", out);
    box0.collect(p + ".box0", out);
    box1.collect(p + ".box1", out);
    box2.collect(p + ".box2", out);
    cls0.collect(p + ".cls0", out);
    cls1.collect(p + ".cls1", out);
    cls2.collect(p + ".cls2", out);
  }
};

// Collapses (n, 4*reg_max, h, w) regression bins to (n, 4, h, w) expected
// distances: per side, softmax over the bins, then sum of bin * probability.
// Pure arithmetic, no parameters.
template <typename T>
Tensor<T> dfl_expectation(const Tensor<T>& x, int reg_max) {
  const Shape& s = x.shape();
  if (reg_max < 1 || s.c != 4 * reg_max)
    throw ShapeError("dfl: expected " + std::to_string(4 * reg_max) + " channels, got " +
                     std::to_string(s.c));
  Tensor<T> out(Shape{s.n, 4, s.h, s.w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int side = 0; side < 4; ++side)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) {
          T mx = x.at(n, side * reg_max, h, w);
          for (int i = 1; i < reg_max; ++i)
            mx = std::max(mx, x.at(n, side * reg_max + i, h, w));
          T z = 0, acc = 0;
          for (int i = 0; i < reg_max; ++i) {
            T e = std::exp(x.at(n, side * reg_max + i, h, w) - mx);
            z += e;
            acc += static_cast<T>(i) * e;
          }
          out.at(n, side, h, w) = acc / z;
        }
  return out;
}

}  // namespace fdm

#endif  // FDM_BLOCKS_HPP
