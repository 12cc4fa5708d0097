#include <gtest/gtest.h>

#include "fdm/block_grad.hpp"
#include "fdm/grad.hpp"

namespace {

using fdm::Conv2dAttrs;
using fdm::GradCheckProblem;
using fdm::GradCheckReport;
using fdm::Shape;
using fdm::TensorD;

constexpr double kTol = 1e-5;

GradCheckReport check(GradCheckProblem p, uint64_t weight_seed = 999) {
  return fdm::gradcheck(p, weight_seed);
}

TEST(GradHarness, CatchesAWrongAdjoint) {
  // sign-flipped sigmoid backward must blow well past the tolerance;
  // a harness that cannot fail is not a check
  GradCheckProblem p;
  p.op_name = "broken";
  p.inputs = {fdm::random_uniform<double>(Shape{1, 2, 3, 3}, 5, -2.0, 2.0)};
  p.forward = [](const std::vector<TensorD>& in) { return fdm::sigmoid(in[0]); };
  p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
    auto g = fdm::sigmoid_backward(in[0], dy);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
    return std::vector<TensorD>{g};
  };
  EXPECT_GT(check(p).max_rel_error, 0.1);
}

TEST(GradHarness, RejectsOversizedProblems) {
  GradCheckProblem p;
  p.op_name = "huge";
  p.inputs = {TensorD(Shape{1, 2, 32, 32}, 0.0)};
  p.forward = [](const std::vector<TensorD>& in) { return in[0]; };
  p.backward = [](const std::vector<TensorD>&, const TensorD& dy) {
    return std::vector<TensorD>{dy};
  };
  EXPECT_THROW(check(p), fdm::ArgError);
}

TEST(ReduceTo, SumsBroadcastAxes) {
  auto src = fdm::random_uniform<double>(Shape{2, 3, 4, 5}, 11, -1.0, 1.0);
  auto r = fdm::reduce_to(src, Shape{1, 3, 1, 1});
  for (int64_t c = 0; c < 3; ++c) {
    double want = 0;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 5; ++w) want += src.at(n, c, h, w);
    ASSERT_NEAR(r.at(0, c, 0, 0), want, 1e-12);
  }
  EXPECT_THROW(fdm::reduce_to(src, Shape{2, 2, 4, 5}), fdm::ShapeError);
}

// ---- individual kernel adjoints ----------------------------------------------

TEST(KernelGrad, ConvStridedGrouped) {
  GradCheckProblem p;
  p.op_name = "conv_s2g2";
  p.inputs = {fdm::random_uniform<double>(Shape{1, 4, 6, 6}, 21, -0.6, 0.6),
              fdm::random_uniform<double>(Shape{6, 2, 3, 3}, 22, -0.6, 0.6)};
  p.forward = [](const std::vector<TensorD>& in) {
    return fdm::conv2d(in[0], in[1], {}, Conv2dAttrs{2, 1, 2});
  };
  p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
    auto g = fdm::conv2d_backward(in[0], in[1], false, Conv2dAttrs{2, 1, 2}, dy);
    return std::vector<TensorD>{g.dx, g.dweight};
  };
  EXPECT_LE(check(p).max_rel_error, kTol);
}

TEST(KernelGrad, BatchNormInfer) {
  const int c = 3;
  fdm::BnParams<double> bn;
  bn.mean = {0.1, -0.2, 0.3};
  bn.var = {1.1, 0.9, 1.3};
  GradCheckProblem p;
  p.op_name = "batchnorm";
  p.inputs = {fdm::random_uniform<double>(Shape{2, c, 4, 4}, 31, -1.0, 1.0),
              fdm::random_uniform<double>(Shape{1, 1, 1, c}, 32, 0.75, 1.25),
              fdm::random_uniform<double>(Shape{1, 1, 1, c}, 33, -0.5, 0.5)};
  auto with = [bn](const std::vector<TensorD>& in) {
    fdm::BnParams<double> b = bn;
    b.gamma = fdm::tensor_vec(in[1]);
    b.beta = fdm::tensor_vec(in[2]);
    return b;
  };
  p.forward = [with](const std::vector<TensorD>& in) {
    return fdm::batchnorm_infer(in[0], with(in));
  };
  p.backward = [with](const std::vector<TensorD>& in, const TensorD& dy) {
    auto g = fdm::batchnorm_infer_backward(in[0], with(in), dy);
    return std::vector<TensorD>{g.dx, fdm::vec_tensor(g.dgamma), fdm::vec_tensor(g.dbeta)};
  };
  EXPECT_LE(check(p).max_rel_error, kTol);
}

TEST(KernelGrad, GroupNorm) {
  const int c = 6, groups = 3;
  GradCheckProblem p;
  p.op_name = "group_norm";
  p.inputs = {fdm::random_uniform<double>(Shape{2, c, 4, 4}, 41, -1.0, 1.0),
              fdm::random_uniform<double>(Shape{1, 1, 1, c}, 42, 0.75, 1.25),
              fdm::random_uniform<double>(Shape{1, 1, 1, c}, 43, -0.5, 0.5)};
  p.forward = [](const std::vector<TensorD>& in) {
    return fdm::group_norm(in[0], groups, fdm::tensor_vec(in[1]), fdm::tensor_vec(in[2]));
  };
  p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
    auto g = fdm::group_norm_backward(in[0], groups, fdm::tensor_vec(in[1]), dy);
    return std::vector<TensorD>{g.dx, fdm::vec_tensor(g.dgamma), fdm::vec_tensor(g.dbeta)};
  };
  EXPECT_LE(check(p).max_rel_error, kTol);
}

TEST(KernelGrad, MatmulBatched) {
  GradCheckProblem p;
  p.op_name = "matmul";
  p.inputs = {fdm::random_uniform<double>(Shape{2, 2, 3, 4}, 51, -1.0, 1.0),
              fdm::random_uniform<double>(Shape{2, 2, 4, 5}, 52, -1.0, 1.0)};
  p.forward = [](const std::vector<TensorD>& in) { return fdm::matmul_batched(in[0], in[1]); };
  p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
    auto g = fdm::matmul_batched_backward(in[0], in[1], dy);
    return std::vector<TensorD>{g.da, g.db};
  };
  EXPECT_LE(check(p).max_rel_error, kTol);
}

TEST(KernelGrad, PoolsAndLayout) {
  // exercise max pool, mean pools, nearest upsampling, transpose, concat and
  // split adjoints in one composed map
  GradCheckProblem p;
  p.op_name = "pool_chain";
  p.inputs = {fdm::random_uniform<double>(Shape{1, 4, 6, 6}, 61, -1.0, 1.0)};
  p.forward = [](const std::vector<TensorD>& in) {
    auto parts = fdm::split(in[0], {2, 2}, 1);
    auto a = fdm::max_pool(parts[0], 3, 2, 1);           // (1,2,3,3)
    auto b = fdm::max_pool(fdm::upsample_nearest(parts[1], 2), 5, 2, 1);  // (1,2,5,5)->crop
    auto bp = fdm::max_pool(b, 3, 1, 0);                 // (1,2,3,3)
    auto cat = fdm::concat(a, bp, 1);                    // (1,4,3,3)
    auto prof = fdm::mul(fdm::avg_pool_w(cat), fdm::avg_pool_h(cat));  // (1,4,3,3)
    return fdm::add(fdm::transpose_hw(prof), fdm::global_avg_pool(cat));
  };
  p.backward = [](const std::vector<TensorD>& in, const TensorD& dy) {
    auto parts = fdm::split(in[0], {2, 2}, 1);
    auto up = fdm::upsample_nearest(parts[1], 2);
    auto a = fdm::max_pool(parts[0], 3, 2, 1);
    auto b = fdm::max_pool(up, 5, 2, 1);
    auto bp = fdm::max_pool(b, 3, 1, 0);
    auto cat = fdm::concat(a, bp, 1);
    auto pw = fdm::avg_pool_w(cat);
    auto ph = fdm::avg_pool_h(cat);
    // dy feeds transpose(prof) + broadcast gap
    TensorD dprof = fdm::transpose_hw(dy);
    TensorD dgap = fdm::reduce_to(dy, Shape{1, 4, 1, 1});
    TensorD dpw = fdm::reduce_to(fdm::mul(dprof, ph), Shape{1, 4, 3, 1});
    TensorD dph = fdm::reduce_to(fdm::mul(dprof, pw), Shape{1, 4, 1, 3});
    TensorD dcat = fdm::add(fdm::avg_pool_w_backward(cat.shape(), dpw),
                            fdm::avg_pool_h_backward(cat.shape(), dph));
    dcat = fdm::add(dcat, fdm::global_avg_pool_backward(cat.shape(), dgap));
    auto dparts = fdm::split(dcat, {2, 2}, 1);
    TensorD da = fdm::max_pool_backward(parts[0], 3, 2, 1, dparts[0]);
    TensorD dbp = fdm::max_pool_backward(b, 3, 1, 0, dparts[1]);
    TensorD dup = fdm::max_pool_backward(up, 5, 2, 1, dbp);
    TensorD db = fdm::upsample_nearest_backward(parts[1].shape(), 2, dup);
    return std::vector<TensorD>{fdm::concat(da, db, 1)};
  };
  EXPECT_LE(check(p).max_rel_error, kTol);
}

// ---- the registry: every listed op, three seeds -------------------------------

TEST(GradSuite, AllOpsThreeSeeds) {
  for (const std::string& op : fdm::gradcheck_op_names()) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      fdm::GradCheckReport rep = fdm::run_gradcheck(op, seed);
      EXPECT_LE(rep.max_rel_error, kTol) << op << " seed " << seed;
      EXPECT_GT(rep.points_checked, 0) << op;
      EXPECT_LE(rep.points_checked, 1000) << op;
    }
  }
}

TEST(GradSuite, RegistryListsTheContractOps) {
  const auto& ops = fdm::gradcheck_op_names();
  for (const char* required : {"conv2d", "softmax", "sigmoid", "silu", "grid_sample_bilinear",
                               "pconv", "dysample", "ema"})
    EXPECT_NE(std::find(ops.begin(), ops.end(), required), ops.end()) << required;
  EXPECT_THROW(fdm::make_gradcheck_problem("not_an_op", 1), fdm::ArgError);
}

}  // namespace
