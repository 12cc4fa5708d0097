#ifndef FDM_BLOCK_GRAD_HPP
#define FDM_BLOCK_GRAD_HPP

#include <string>
#include <vector>

#include "fdm/blocks.hpp"
#include "fdm/grad.hpp"

// Ready-made finite-difference problems: one per checkable op. Composite
// blocks get their adjoints composed by hand from the kernel VJPs, stepping
// backward through the exact forward chain. The numeric side of the check
// always runs the real block forward, so any drift between a block's forward
// and its hand-written adjoint shows up as a gradcheck failure.

namespace fdm {

inline TensorD vec_tensor(const std::vector<double>& v) {
  TensorD t(Shape{1, 1, 1, static_cast<int64_t>(v.size())});
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

inline std::vector<double> tensor_vec(const TensorD& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

inline const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> ops = {
      "conv2d", "softmax", "sigmoid", "silu", "grid_sample_bilinear",
      "pconv",  "fastblock", "dysample", "ema"};
  return ops;
}

inline GradCheckProblem make_gradcheck_problem(const std::string& op, uint64_t seed) {
  GradCheckProblem p;
  p.op_name = op;

  if (op == "conv2d") {
    // x 288 + weight 576 + bias 8 scalars
    p.inputs = {random_uniform<double>(Shape{1, 8, 6, 6}, seed, -0.6, 0.6),
                random_uniform<double>(Shape{8, 8, 3, 3}, seed + 1, -0.6, 0.6),
                random_uniform<double>(Shape{1, 1, 1, 8}, seed + 2, -0.6, 0.6)};
    p.forward = [](const std::vector<TensorD>& in) {
      return conv2d(in[0], in[1], tensor_vec(in[2]), Conv2dAttrs{1, 1, 1});
    };
    p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
      auto g = conv2d_backward(in[0], in[1], true, Conv2dAttrs{1, 1, 1}, dy);
      return std::vector<TensorD>{g.dx, g.dweight, vec_tensor(g.dbias)};
    };
    return p;
  }

  if (op == "softmax") {
    p.inputs = {random_uniform<double>(Shape{1, 8, 6, 6}, seed, -2.0, 2.0)};
    p.forward = [](const std::vector<TensorD>& in) { return softmax(in[0], 1); };
    p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
      return std::vector<TensorD>{softmax_backward(softmax(in[0], 1), dy, 1)};
    };
    return p;
  }

  if (op == "sigmoid") {
    p.inputs = {random_uniform<double>(Shape{1, 8, 6, 6}, seed, -3.0, 3.0)};
    p.forward = [](const std::vector<TensorD>& in) { return sigmoid(in[0]); };
    p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
      return std::vector<TensorD>{sigmoid_backward(in[0], dy)};
    };
    return p;
  }

  if (op == "silu") {
    p.inputs = {random_uniform<double>(Shape{1, 8, 6, 6}, seed, -3.0, 3.0)};
    p.forward = [](const std::vector<TensorD>& in) { return silu(in[0]); };
    p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
      return std::vector<TensorD>{silu_backward(in[0], dy)};
    };
    return p;
  }

  if (op == "grid_sample_bilinear") {
    // grid points kept away from integer pixel boundaries so the sampled
    // surface is smooth at every probe the central difference takes
    const int64_t hi = 6, wi = 6, ho = 5, wo = 5;
    TensorD gt(Shape{1, ho, wo, 2});
    Rng rng(seed + 7);
    for (int64_t i = 0; i < ho * wo; ++i) {
      double px = std::floor(rng.next_unit() * (wi - 1)) + 0.2 + 0.6 * rng.next_unit();
      double py = std::floor(rng.next_unit() * (hi - 1)) + 0.2 + 0.6 * rng.next_unit();
      gt[2 * i + 0] = (2.0 * px + 1.0) / static_cast<double>(wi) - 1.0;
      gt[2 * i + 1] = (2.0 * py + 1.0) / static_cast<double>(hi) - 1.0;
    }
    p.inputs = {random_uniform<double>(Shape{1, 4, hi, wi}, seed, -1.0, 1.0), gt};
    auto to_grid = [ho, wo](const TensorD& t) {
      Grid<double> g(1, ho, wo);
      std::copy(t.data(), t.data() + t.numel(), g.data.begin());
      return g;
    };
    p.forward = [to_grid](const std::vector<TensorD>& in) {
      return grid_sample_bilinear(in[0], to_grid(in[1]));
    };
    p.backward = [to_grid](const std::vector<TensorD>& in, const TensorD& dy) {
      auto g = grid_sample_bilinear_backward(in[0], to_grid(in[1]), dy);
      TensorD dg(in[1].shape());
      std::copy(g.dgrid.data.begin(), g.dgrid.data.end(), dg.data());
      return std::vector<TensorD>{g.dx, dg};
    };
    return p;
  }

  if (op == "pconv") {
    const int c = 8, cp = 2;
    p.inputs = {random_uniform<double>(Shape{1, c, 6, 6}, seed, -0.6, 0.6),
                random_uniform<double>(Shape{cp, cp, 3, 3}, seed + 1, -0.6, 0.6)};
    p.forward = [c, cp](const std::vector<TensorD>& in) {
      PConv<double> blk(c, cp);
      blk.weight = in[1];
      return blk.forward(in[0]);
    };
    p.backward = [c, cp](const std::vector<TensorD>& in, const TensorD& dy) {
      auto xs = split(in[0], {cp, c - cp}, 1);
      auto dys = split(dy, {cp, c - cp}, 1);
      auto g = conv2d_backward(xs[0], in[1], false, Conv2dAttrs{1, 1, 1}, dys[0]);
      return std::vector<TensorD>{concat(g.dx, dys[1], 1), g.dweight};
    };
    return p;
  }

  if (op == "fastblock") {
    const int c = 8;
    // running stats are constants of the problem, not checked inputs
    Rng stat(seed + 17);
    std::vector<double> mean(c * 2), var(c * 2);
    for (auto& m : mean) m = stat.next_uniform(-0.3, 0.3);
    for (auto& v : var) v = stat.next_uniform(0.8, 1.2);
    p.inputs = {random_uniform<double>(Shape{1, c, 6, 6}, seed, -0.6, 0.6),
                random_uniform<double>(Shape{c / 4, c / 4, 3, 3}, seed + 1, -0.6, 0.6),
                random_uniform<double>(Shape{2 * c, c, 1, 1}, seed + 2, -0.6, 0.6),
                random_uniform<double>(Shape{1, 1, 1, 2 * c}, seed + 3, 0.75, 1.25),
                random_uniform<double>(Shape{1, 1, 1, 2 * c}, seed + 4, -0.5, 0.5),
                random_uniform<double>(Shape{c, 2 * c, 1, 1}, seed + 5, -0.6, 0.6)};
    auto build = [c, mean, var](const std::vector<TensorD>& in) {
      FastBlock<double> blk(c);
      blk.pconv.weight = in[1];
      blk.expand.weight = in[2];
      blk.expand.bn.gamma = tensor_vec(in[3]);
      blk.expand.bn.beta = tensor_vec(in[4]);
      blk.expand.bn.mean = mean;
      blk.expand.bn.var = var;
      blk.project.weight = in[5];
      return blk;
    };
    p.forward = [build](const std::vector<TensorD>& in) { return build(in).forward(in[0]); };
    p.backward = [c, build](const std::vector<TensorD>& in, const TensorD& dy) {
      FastBlock<double> blk = build(in);
      const int cp = c / 4;
      // forward intermediates
      TensorD pc = blk.pconv.forward(in[0]);
      TensorD z = conv2d(pc, blk.expand.weight, {}, Conv2dAttrs{1, 0, 1});
      TensorD b = batchnorm_infer(z, blk.expand.bn);
      TensorD e = silu(b);
      // out = x + project(e); walk it backward
      auto gp = conv2d_backward(e, blk.project.weight, false, Conv2dAttrs{1, 0, 1}, dy);
      TensorD db = silu_backward(b, gp.dx);
      auto gbn = batchnorm_infer_backward(z, blk.expand.bn, db);
      auto ge = conv2d_backward(pc, blk.expand.weight, false, Conv2dAttrs{1, 0, 1}, gbn.dx);
      auto xs = split(in[0], {cp, c - cp}, 1);
      auto dpc = split(ge.dx, {cp, c - cp}, 1);
      auto gpc = conv2d_backward(xs[0], blk.pconv.weight, false, Conv2dAttrs{1, 1, 1}, dpc[0]);
      TensorD dx = add(concat(gpc.dx, dpc[1], 1), dy);  // residual path
      return std::vector<TensorD>{dx,
                                  gpc.dweight,
                                  ge.dweight,
                                  vec_tensor(gbn.dgamma),
                                  vec_tensor(gbn.dbeta),
                                  gp.dweight};
    };
    return p;
  }

  if (op == "dysample") {
    const int c = 8, scale = 2, groups = 4;
    // small magnitudes keep every sample point a safe distance from pixel
    // boundaries, where bilinear gathering has derivative kinks
    p.inputs = {random_uniform<double>(Shape{1, c, 6, 6}, seed, -0.1, 0.1),
                random_uniform<double>(Shape{2 * groups * scale * scale, c, 1, 1}, seed + 1, -0.1,
                                       0.1),
                random_uniform<double>(Shape{1, 1, 1, 2 * groups * scale * scale}, seed + 2, -0.25,
                                       0.25)};
    auto build = [c, scale, groups](const std::vector<TensorD>& in) {
      Dysample<double> blk(c, scale, groups);
      blk.offset.weight = in[1];
      blk.offset.bias = tensor_vec(in[2]);
      return blk;
    };
    p.forward = [build](const std::vector<TensorD>& in) { return build(in).forward(in[0]); };
    p.backward = [c, scale, groups, build](const std::vector<TensorD>& in, const TensorD& dy) {
      Dysample<double> blk = build(in);
      const Shape& s = in[0].shape();
      const int s2 = scale * scale;
      const int gs2 = groups * s2;
      TensorD off = blk.offset.forward(in[0]);
      Grid<double> grid(s.n * groups, s.h * scale, s.w * scale);
      for (int64_t b = 0; b < s.n; ++b)
        for (int k = 0; k < groups; ++k)
          for (int64_t iy = 0; iy < s.h; ++iy)
            for (int64_t ix = 0; ix < s.w; ++ix)
              for (int i = 0; i < scale; ++i)
                for (int j = 0; j < scale; ++j) {
                  const int sub = k * s2 + i * scale + j;
                  double px = static_cast<double>(ix) + 0.5 +
                              off.at(b, sub, iy, ix) * blk.range_factor + blk.init_shift(j);
                  double py = static_cast<double>(iy) + 0.5 +
                              off.at(b, gs2 + sub, iy, ix) * blk.range_factor + blk.init_shift(i);
                  grid.x(b * groups + k, iy * scale + i, ix * scale + j) =
                      2.0 * px / static_cast<double>(s.w) - 1.0;
                  grid.y(b * groups + k, iy * scale + i, ix * scale + j) =
                      2.0 * py / static_cast<double>(s.h) - 1.0;
                }
      TensorD folded = in[0].reshaped(Shape{s.n * groups, s.c / groups, s.h, s.w});
      TensorD dyg = dy.reshaped(Shape{s.n * groups, s.c / groups, s.h * scale, s.w * scale});
      auto gs = grid_sample_bilinear_backward(folded, grid, dyg);
      // chain the grid adjoint back onto the offset channels
      TensorD doff(off.shape(), 0.0);
      for (int64_t b = 0; b < s.n; ++b)
        for (int k = 0; k < groups; ++k)
          for (int64_t iy = 0; iy < s.h; ++iy)
            for (int64_t ix = 0; ix < s.w; ++ix)
              for (int i = 0; i < scale; ++i)
                for (int j = 0; j < scale; ++j) {
                  const int sub = k * s2 + i * scale + j;
                  doff.at(b, sub, iy, ix) = gs.dgrid.x(b * groups + k, iy * scale + i,
                                                       ix * scale + j) *
                                            2.0 / static_cast<double>(s.w) * blk.range_factor;
                  doff.at(b, gs2 + sub, iy, ix) = gs.dgrid.y(b * groups + k, iy * scale + i,
                                                             ix * scale + j) *
                                                  2.0 / static_cast<double>(s.h) *
                                                  blk.range_factor;
                }
      auto gconv = conv2d_backward(in[0], blk.offset.weight, true, Conv2dAttrs{1, 0, 1}, doff);
      TensorD dx = add(gs.dx.reshaped(s), gconv.dx);
      return std::vector<TensorD>{dx, gconv.dweight, vec_tensor(gconv.dbias)};
    };
    return p;
  }

  if (op == "ema") {
    const int c = 8, groups = 2, cg = c / groups;
    p.inputs = {random_uniform<double>(Shape{1, c, 6, 6}, seed, -0.6, 0.6),
                random_uniform<double>(Shape{cg, cg, 1, 1}, seed + 1, -0.6, 0.6),
                random_uniform<double>(Shape{1, 1, 1, cg}, seed + 2, -0.3, 0.3),
                random_uniform<double>(Shape{cg, cg, 3, 3}, seed + 3, -0.6, 0.6),
                random_uniform<double>(Shape{1, 1, 1, cg}, seed + 4, -0.3, 0.3),
                random_uniform<double>(Shape{1, 1, 1, cg}, seed + 5, 0.75, 1.25),
                random_uniform<double>(Shape{1, 1, 1, cg}, seed + 6, -0.5, 0.5)};
    auto build = [c, groups](const std::vector<TensorD>& in) {
      Ema<double> blk(c, groups);
      blk.conv1.weight = in[1];
      blk.conv1.bias = tensor_vec(in[2]);
      blk.conv3.weight = in[3];
      blk.conv3.bias = tensor_vec(in[4]);
      blk.gn_gamma = tensor_vec(in[5]);
      blk.gn_beta = tensor_vec(in[6]);
      return blk;
    };
    p.forward = [build](const std::vector<TensorD>& in) { return build(in).forward(in[0]); };
    p.backward = [c, groups, cg, build](const std::vector<TensorD>& in, const TensorD& dy) {
      Ema<double> blk = build(in);
      const Shape& s = in[0].shape();
      const int64_t bg = s.n * groups;
      const int64_t hwn = s.h * s.w;
      // forward intermediates, mirroring Ema::forward step by step
      TensorD gx = in[0].reshaped(Shape{bg, cg, s.h, s.w});
      TensorD xh = avg_pool_w(gx);
      TensorD xwT = transpose_hw(avg_pool_h(gx));
      TensorD cat = concat(xh, xwT, 2);
      TensorD prof = blk.conv1.forward(cat);
      std::vector<TensorD> gates = split(prof, {s.h, s.w}, 2);
      TensorD sh = sigmoid(gates[0]);
      TensorD swT = transpose_hw(gates[1]);
      TensorD sw = sigmoid(swT);
      TensorD t1 = mul(gx, sh);
      TensorD gated = mul(t1, sw);
      TensorD x1 = group_norm(gated, cg, blk.gn_gamma, blk.gn_beta);
      TensorD x2 = blk.conv3.forward(gx);
      TensorD a1 = softmax(global_avg_pool(x1).reshaped(Shape{bg, 1, 1, cg}), 3);
      TensorD a2 = softmax(global_avg_pool(x2).reshaped(Shape{bg, 1, 1, cg}), 3);
      TensorD f2 = x2.reshaped(Shape{bg, 1, cg, hwn});
      TensorD f1 = x1.reshaped(Shape{bg, 1, cg, hwn});
      TensorD scores = add(matmul_batched(a1, f2), matmul_batched(a2, f1))
                           .reshaped_inplace(Shape{bg, 1, s.h, s.w});
      TensorD sig = sigmoid(scores);
      // backward
      TensorD dout = dy.reshaped(Shape{bg, cg, s.h, s.w});
      TensorD dgx = mul(dout, sig);
      TensorD dsig = reduce_to(mul(dout, gx), Shape{bg, 1, s.h, s.w});
      TensorD ds = sigmoid_backward(scores, dsig).reshaped_inplace(Shape{bg, 1, 1, hwn});
      auto mm1 = matmul_batched_backward(a1, f2, ds);
      auto mm2 = matmul_batched_backward(a2, f1, ds);
      TensorD dx2 = mm1.db.reshaped(Shape{bg, cg, s.h, s.w});
      TensorD dx1 = mm2.db.reshaped(Shape{bg, cg, s.h, s.w});
      TensorD dr1 = softmax_backward(a1, mm1.da, 3);
      TensorD dr2 = softmax_backward(a2, mm2.da, 3);
      dx1 = add(dx1, global_avg_pool_backward(Shape{bg, cg, s.h, s.w},
                                              dr1.reshaped(Shape{bg, cg, 1, 1})));
      dx2 = add(dx2, global_avg_pool_backward(Shape{bg, cg, s.h, s.w},
                                              dr2.reshaped(Shape{bg, cg, 1, 1})));
      auto g3 = conv2d_backward(gx, blk.conv3.weight, true, Conv2dAttrs{1, 1, 1}, dx2);
      dgx = add(dgx, g3.dx);
      auto ggn = group_norm_backward(gated, cg, blk.gn_gamma, dx1);
      TensorD dt1 = mul(ggn.dx, sw);
      TensorD dsw = reduce_to(mul(ggn.dx, t1), Shape{bg, cg, 1, s.w});
      dgx = add(dgx, mul(dt1, sh));
      TensorD dsh = reduce_to(mul(dt1, gx), Shape{bg, cg, s.h, 1});
      TensorD dgw = transpose_hw(sigmoid_backward(swT, dsw));
      TensorD dgh = sigmoid_backward(gates[0], dsh);
      auto g1 = conv2d_backward(cat, blk.conv1.weight, true, Conv2dAttrs{1, 0, 1},
                                concat(dgh, dgw, 2));
      std::vector<TensorD> dprof = split(g1.dx, {s.h, s.w}, 2);
      dgx = add(dgx, avg_pool_w_backward(Shape{bg, cg, s.h, s.w}, dprof[0]));
      dgx = add(dgx, avg_pool_h_backward(Shape{bg, cg, s.h, s.w}, transpose_hw(dprof[1])));
      return std::vector<TensorD>{std::move(dgx).reshaped_inplace(s),
                                  g1.dweight,
                                  vec_tensor(g1.dbias),
                                  g3.dweight,
                                  vec_tensor(g3.dbias),
                                  vec_tensor(ggn.dgamma),
                                  vec_tensor(ggn.dbeta)};
    };
    return p;
  }

  throw ArgError("unknown gradcheck op: " + op);
}

inline GradCheckReport run_gradcheck(const std::string& op, uint64_t seed, double step = 1e-5) {
  GradCheckProblem problem = make_gradcheck_problem(op, seed);
  return gradcheck(problem, seed ^ 0xdf0c94826e25c37bULL, step);
}

}  // namespace fdm

#endif  // FDM_BLOCK_GRAD_HPP
