#ifndef FDM_KERNELS_HPP
#define FDM_KERNELS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fdm/tensor.hpp"

// Dense NCHW reference kernels. Everything is a direct loop nest: the point is
// bit-reproducible, obviously-correct arithmetic, not throughput.

namespace fdm {

namespace detail {

inline void check_axis(int axis) {
  if (axis < 0 || axis > 3) throw ArgError("axis must be in [0,3], got " + std::to_string(axis));
}

inline std::array<int64_t, 4> dims_of(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

inline Shape shape_from(const std::array<int64_t, 4>& d) { return Shape{d[0], d[1], d[2], d[3]}; }

}  // namespace detail

// ---- convolution ----------------------------------------------------------

struct Conv2dAttrs {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

inline Shape conv2d_out_shape(const Shape& x, const Shape& w, const Conv2dAttrs& a) {
  if (a.stride < 1) throw ArgError("conv2d: stride must be >= 1");
  if (a.padding < 0) throw ArgError("conv2d: padding must be >= 0");
  if (a.groups < 1) throw ArgError("conv2d: groups must be >= 1");
  if (x.c % a.groups != 0 || w.n % a.groups != 0)
    throw ShapeError("conv2d: channels " + std::to_string(x.c) + " and filters " +
                     std::to_string(w.n) + " must both divide by groups " +
                     std::to_string(a.groups));
  if (w.c != x.c / a.groups)
    throw ShapeError("conv2d: weight expects " + std::to_string(w.c) +
                     " input channels per group, input has " + std::to_string(x.c / a.groups));
  int64_t ho = (x.h + 2 * a.padding - w.h) / a.stride + 1;
  int64_t wo = (x.w + 2 * a.padding - w.w) / a.stride + 1;
  if (ho < 1 || wo < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(w.h) + "x" + std::to_string(w.w) +
                     " does not fit input " + x.str() + " with padding " +
                     std::to_string(a.padding));
  return Shape{x.n, w.n, ho, wo};
}

// weight layout (c_out, c_in/groups, kh, kw); empty bias means none.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::vector<T>& bias,
                 const Conv2dAttrs& attrs = {}) {
  Shape os = conv2d_out_shape(x.shape(), weight.shape(), attrs);
  if (!bias.empty() && static_cast<int64_t>(bias.size()) != weight.shape().n)
    throw ShapeError("conv2d: bias size " + std::to_string(bias.size()) + " != filters " +
                     std::to_string(weight.shape().n));
  Tensor<T> y(os);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  const int64_t cpg_in = xs.c / attrs.groups;
  const int64_t cpg_out = ws.n / attrs.groups;
  for (int64_t n = 0; n < os.n; ++n)
    for (int64_t co = 0; co < os.c; ++co) {
      const int64_t g = co / cpg_out;
      const T b = bias.empty() ? T(0) : bias[static_cast<size_t>(co)];
      for (int64_t oh = 0; oh < os.h; ++oh)
        for (int64_t ow = 0; ow < os.w; ++ow) {
          T acc = b;
          for (int64_t ci = 0; ci < cpg_in; ++ci)
            for (int64_t kh = 0; kh < ws.h; ++kh) {
              const int64_t ih = oh * attrs.stride - attrs.padding + kh;
              if (ih < 0 || ih >= xs.h) continue;
              for (int64_t kw = 0; kw < ws.w; ++kw) {
                const int64_t iw = ow * attrs.stride - attrs.padding + kw;
                if (iw < 0 || iw >= xs.w) continue;
                acc += x.at(n, g * cpg_in + ci, ih, iw) * weight.at(co, ci, kh, kw);
              }
            }
          y.at(n, co, oh, ow) = acc;
        }
    }
  FDM_DEBUG_CHECK_FINITE(y, "conv2d");
  return y;
}

// ---- normalization --------------------------------------------------------

template <typename T>
struct BnParams {
  std::vector<T> gamma, beta, mean, var;
  T eps = static_cast<T>(1e-5);
};

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BnParams<T>& bn) {
  const int64_t c = x.shape().c;
  auto need = static_cast<size_t>(c);
  if (bn.gamma.size() != need || bn.beta.size() != need || bn.mean.size() != need ||
      bn.var.size() != need)
    throw ShapeError("batchnorm: parameter vectors must have " + std::to_string(c) + " entries");
  Tensor<T> y(x.shape());
  std::vector<T> scale(need), shift(need);
  for (size_t i = 0; i < need; ++i) {
    T inv = T(1) / std::sqrt(bn.var[i] + bn.eps);
    scale[i] = bn.gamma[i] * inv;
    shift[i] = bn.beta[i] - bn.mean[i] * scale[i];
  }
  const int64_t plane = x.shape().h * x.shape().w;
  for (int64_t n = 0; n < x.shape().n; ++n)
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* src = x.data() + (n * c + ci) * plane;
      T* dst = y.data() + (n * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i)
        dst[i] = src[i] * scale[static_cast<size_t>(ci)] + shift[static_cast<size_t>(ci)];
    }
  return y;
}

// Per-group mean/variance over (channels_in_group, h, w); affine is per channel.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int num_groups, const std::vector<T>& gamma,
                     const std::vector<T>& beta, T eps = static_cast<T>(1e-5)) {
  const Shape& s = x.shape();
  if (num_groups < 1 || s.c % num_groups != 0)
    throw ShapeError("group_norm: " + std::to_string(s.c) + " channels not divisible into " +
                     std::to_string(num_groups) + " groups");
  if (static_cast<int64_t>(gamma.size()) != s.c || static_cast<int64_t>(beta.size()) != s.c)
    throw ShapeError("group_norm: affine vectors must have " + std::to_string(s.c) + " entries");
  const int64_t cpg = s.c / num_groups;
  const int64_t plane = s.h * s.w;
  const int64_t group_elems = cpg * plane;
  Tensor<T> y(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t g = 0; g < num_groups; ++g) {
      const T* base = x.data() + (n * s.c + g * cpg) * plane;
      T mean = 0;
      for (int64_t i = 0; i < group_elems; ++i) mean += base[i];
      mean /= static_cast<T>(group_elems);
      T var = 0;
      for (int64_t i = 0; i < group_elems; ++i) {
        T d = base[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(group_elems);
      const T inv = T(1) / std::sqrt(var + eps);
      T* out = y.data() + (n * s.c + g * cpg) * plane;
      for (int64_t ci = 0; ci < cpg; ++ci) {
        const T sc = gamma[static_cast<size_t>(g * cpg + ci)] * inv;
        const T sh = beta[static_cast<size_t>(g * cpg + ci)] - mean * sc;
        for (int64_t i = 0; i < plane; ++i) out[ci * plane + i] = base[ci * plane + i] * sc + sh;
      }
    }
  return y;
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
inline T sigmoid_scalar(T v) {
  // split on sign so exp() never overflows
  if (v >= T(0)) {
    T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = sigmoid_scalar(x[i]);
  return y;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * sigmoid_scalar(x[i]);
  return y;
}

namespace detail {

inline bool broadcastable(const std::array<int64_t, 4>& a, const std::array<int64_t, 4>& b) {
  for (int i = 0; i < 4; ++i)
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) return false;
  return true;
}

template <typename T, typename F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F&& op, const char* name) {
  auto da = dims_of(a.shape());
  auto db = dims_of(b.shape());
  if (!broadcastable(da, db))
    throw ShapeError(std::string(name) + ": shapes " + a.shape().str() + " and " +
                     b.shape().str() + " do not broadcast");
  std::array<int64_t, 4> do_;
  for (int i = 0; i < 4; ++i) do_[i] = std::max(da[i], db[i]);
  Tensor<T> y(shape_from(do_));
  // strides with broadcast dims pinned to 0
  std::array<int64_t, 4> sa{}, sb{};
  int64_t ra = 1, rb = 1;
  for (int i = 3; i >= 0; --i) {
    sa[i] = (da[i] == 1 && do_[i] != 1) ? 0 : ra;
    sb[i] = (db[i] == 1 && do_[i] != 1) ? 0 : rb;
    ra *= da[i];
    rb *= db[i];
  }
  int64_t idx = 0;
  for (int64_t n = 0; n < do_[0]; ++n)
    for (int64_t c = 0; c < do_[1]; ++c)
      for (int64_t h = 0; h < do_[2]; ++h)
        for (int64_t w = 0; w < do_[3]; ++w)
          y[idx++] = op(a[n * sa[0] + c * sa[1] + h * sa[2] + w * sa[3]],
                        b[n * sb[0] + c * sb[1] + h * sb[2] + w * sb[3]]);
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(a, b, [](T x, T y) { return x * y; }, "mul");
}

// ---- softmax ---------------------------------------------------------------

// Max-subtracted softmax along one axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = 1) {
  detail::check_axis(axis);
  auto d = detail::dims_of(x.shape());
  std::array<int64_t, 4> stride{};
  int64_t r = 1;
  for (int i = 3; i >= 0; --i) {
    stride[i] = r;
    r *= d[i];
  }
  const int64_t len = d[static_cast<size_t>(axis)];
  const int64_t step = stride[static_cast<size_t>(axis)];
  Tensor<T> y(x.shape());
  std::array<int64_t, 4> outer = d;
  outer[static_cast<size_t>(axis)] = 1;
  for (int64_t n = 0; n < outer[0]; ++n)
    for (int64_t c = 0; c < outer[1]; ++c)
      for (int64_t h = 0; h < outer[2]; ++h)
        for (int64_t w = 0; w < outer[3]; ++w) {
          const int64_t base = n * stride[0] + c * stride[1] + h * stride[2] + w * stride[3];
          T mx = x[base];
          for (int64_t i = 1; i < len; ++i) mx = std::max(mx, x[base + i * step]);
          T sum = 0;
          for (int64_t i = 0; i < len; ++i) {
            T e = std::exp(x[base + i * step] - mx);
            y[base + i * step] = e;
            sum += e;
          }
          for (int64_t i = 0; i < len; ++i) y[base + i * step] /= sum;
        }
  return y;
}

// ---- pooling ---------------------------------------------------------------

// Max pool with -inf padding semantics (padding never wins the max).
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, int k, int stride, int padding) {
  if (k < 1 || stride < 1 || padding < 0) throw ArgError("max_pool: bad kernel/stride/padding");
  const Shape& s = x.shape();
  int64_t ho = (s.h + 2 * padding - k) / stride + 1;
  int64_t wo = (s.w + 2 * padding - k) / stride + 1;
  if (ho < 1 || wo < 1)
    throw ShapeError("max_pool: window " + std::to_string(k) + " does not fit " + s.str());
  Tensor<T> y(Shape{s.n, s.c, ho, wo});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          for (int kh = 0; kh < k; ++kh) {
            int64_t ih = oh * stride - padding + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              int64_t iw = ow * stride - padding + kw;
              if (iw < 0 || iw >= s.w) continue;
              best = std::max(best, x.at(n, c, ih, iw));
            }
          }
          y.at(n, c, oh, ow) = best;
        }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> y(Shape{s.n, s.c, 1, 1});
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const T* src = x.data() + (n * s.c + c) * plane;
      T sum = 0;
      for (int64_t i = 0; i < plane; ++i) sum += src[i];
      y.at(n, c, 0, 0) = sum / static_cast<T>(plane);
    }
  return y;
}

// Row profile: average over w, keeping h. (n,c,h,w) -> (n,c,h,1)
template <typename T>
Tensor<T> avg_pool_w(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> y(Shape{s.n, s.c, s.h, 1});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h) {
        T sum = 0;
        for (int64_t w = 0; w < s.w; ++w) sum += x.at(n, c, h, w);
        y.at(n, c, h, 0) = sum / static_cast<T>(s.w);
      }
  return y;
}

// Column profile: average over h, keeping w. (n,c,h,w) -> (n,c,1,w)
template <typename T>
Tensor<T> avg_pool_h(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> y(Shape{s.n, s.c, 1, s.w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t w = 0; w < s.w; ++w) {
        T sum = 0;
        for (int64_t h = 0; h < s.h; ++h) sum += x.at(n, c, h, w);
        y.at(n, c, 0, w) = sum / static_cast<T>(s.h);
      }
  return y;
}

// ---- layout ops ------------------------------------------------------------

template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> y(Shape{s.n, s.c, s.w, s.h});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) y.at(n, c, w, h) = x.at(n, c, h, w);
  return y;
}

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, int axis = 1) {
  detail::check_axis(axis);
  if (parts.empty()) throw ArgError("concat: no inputs");
  auto d0 = detail::dims_of(parts[0]->shape());
  int64_t total = d0[static_cast<size_t>(axis)];
  for (size_t i = 1; i < parts.size(); ++i) {
    auto di = detail::dims_of(parts[i]->shape());
    for (int j = 0; j < 4; ++j)
      if (j != axis && di[j] != d0[j])
        throw ShapeError("concat: input " + std::to_string(i) + " shape " +
                         parts[i]->shape().str() + " mismatches " + parts[0]->shape().str() +
                         " outside axis " + std::to_string(axis));
    total += di[static_cast<size_t>(axis)];
  }
  auto dout = d0;
  dout[static_cast<size_t>(axis)] = total;
  Tensor<T> y(detail::shape_from(dout));
  // copy contiguous (inner x axis-run) blocks per outer index
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= dout[static_cast<size_t>(i)];
  for (int i = axis + 1; i < 4; ++i) inner *= dout[static_cast<size_t>(i)];
  int64_t offset = 0;
  for (const Tensor<T>* p : parts) {
    const int64_t len = detail::dims_of(p->shape())[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
      std::copy(p->data() + o * len * inner, p->data() + (o + 1) * len * inner,
                y.data() + (o * total + offset) * inner);
    offset += len;
  }
  return y;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis = 1) {
  return concat<T>({&a, &b}, axis);
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<int64_t>& sizes, int axis = 1) {
  detail::check_axis(axis);
  auto d = detail::dims_of(x.shape());
  int64_t total = 0;
  for (int64_t s : sizes) {
    if (s < 1) throw ArgError("split: sizes must be positive");
    total += s;
  }
  if (total != d[static_cast<size_t>(axis)])
    throw ShapeError("split: sizes sum to " + std::to_string(total) + ", axis has " +
                     std::to_string(d[static_cast<size_t>(axis)]));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= d[static_cast<size_t>(i)];
  for (int i = axis + 1; i < 4; ++i) inner *= d[static_cast<size_t>(i)];
  std::vector<Tensor<T>> out;
  out.reserve(sizes.size());
  int64_t offset = 0;
  for (int64_t len : sizes) {
    auto dp = d;
    dp[static_cast<size_t>(axis)] = len;
    Tensor<T> part(detail::shape_from(dp));
    for (int64_t o = 0; o < outer; ++o)
      std::copy(x.data() + (o * d[static_cast<size_t>(axis)] + offset) * inner,
                x.data() + (o * d[static_cast<size_t>(axis)] + offset + len) * inner,
                part.data() + o * len * inner);
    offset += len;
    out.push_back(std::move(part));
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int scale) {
  if (scale < 1) throw ArgError("upsample_nearest: scale must be >= 1");
  const Shape& s = x.shape();
  Tensor<T> y(Shape{s.n, s.c, s.h * scale, s.w * scale});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h * scale; ++h)
        for (int64_t w = 0; w < s.w * scale; ++w)
          y.at(n, c, h, w) = x.at(n, c, h / scale, w / scale);
  return y;
}

// ---- sampling --------------------------------------------------------------

// Bilinear gather at normalized grid coordinates, align_corners=false, border
// padding. Grid holds (x, y) in [-1, 1]; px = ((x + 1) * W - 1) / 2 and the
// four gather taps are clamped to the image, so out-of-range coordinates
// extend the edge values.
template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& x, const Grid<T>& grid) {
  const Shape& s = x.shape();
  if (grid.n != s.n)
    throw ShapeError("grid_sample: grid batch " + std::to_string(grid.n) + " != input batch " +
                     std::to_string(s.n));
  Tensor<T> y(Shape{s.n, s.c, grid.h, grid.w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t gh = 0; gh < grid.h; ++gh)
      for (int64_t gw = 0; gw < grid.w; ++gw) {
        const T px = (grid.x(n, gh, gw) + T(1)) * static_cast<T>(s.w) / T(2) - T(0.5);
        const T py = (grid.y(n, gh, gw) + T(1)) * static_cast<T>(s.h) / T(2) - T(0.5);
        const T fx = std::floor(px);
        const T fy = std::floor(py);
        const T ax = px - fx;
        const T ay = py - fy;
        const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(fx), 0, s.w - 1);
        const int64_t x1 = std::clamp<int64_t>(static_cast<int64_t>(fx) + 1, 0, s.w - 1);
        const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(fy), 0, s.h - 1);
        const int64_t y1 = std::clamp<int64_t>(static_cast<int64_t>(fy) + 1, 0, s.h - 1);
        for (int64_t c = 0; c < s.c; ++c) {
          const T v00 = x.at(n, c, y0, x0);
          const T v01 = x.at(n, c, y0, x1);
          const T v10 = x.at(n, c, y1, x0);
          const T v11 = x.at(n, c, y1, x1);
          y.at(n, c, gh, gw) = (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) +
                               ay * ((T(1) - ax) * v10 + ax * v11);
        }
      }
  FDM_DEBUG_CHECK_FINITE(y, "grid_sample_bilinear");
  return y;
}

// ---- matmul ----------------------------------------------------------------

// Batched matmul over the last two dims: (n,c,a,k) x (n,c,k,b) -> (n,c,a,b).
template <typename T>
Tensor<T> matmul_batched(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.c != sb.c)
    throw ShapeError("matmul: batch dims differ, " + sa.str() + " vs " + sb.str());
  if (sa.w != sb.h)
    throw ShapeError("matmul: inner dims differ, " + sa.str() + " vs " + sb.str());
  Tensor<T> y(Shape{sa.n, sa.c, sa.h, sb.w});
  for (int64_t n = 0; n < sa.n; ++n)
    for (int64_t c = 0; c < sa.c; ++c)
      for (int64_t i = 0; i < sa.h; ++i)
        for (int64_t j = 0; j < sb.w; ++j) {
          T acc = 0;
          for (int64_t k = 0; k < sa.w; ++k) acc += a.at(n, c, i, k) * b.at(n, c, k, j);
          y.at(n, c, i, j) = acc;
        }
  return y;
}

}  // namespace fdm

#endif  // FDM_KERNELS_HPP
