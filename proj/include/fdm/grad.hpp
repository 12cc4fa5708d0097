#ifndef FDM_GRAD_HPP
#define FDM_GRAD_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fdm/kernels.hpp"
#include "fdm/tensor.hpp"

// Hand-written vector-Jacobian products for the kernel set, plus a central-
// difference checker. Backward passes mirror their forward loop nests; no
// autodiff machinery, every adjoint is explicit.

namespace fdm {

// Sum `src` down to `target` along axes where target has extent 1 (the
// adjoint of broadcasting).
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& src, const Shape& target) {
  auto ds = detail::dims_of(src.shape());
  auto dt = detail::dims_of(target);
  for (int i = 0; i < 4; ++i)
    if (dt[i] != ds[i] && dt[i] != 1)
      throw ShapeError("reduce_to: cannot reduce " + src.shape().str() + " to " + target.str());
  Tensor<T> out(target, T(0));
  std::array<int64_t, 4> st{};
  int64_t r = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = (dt[i] == 1 && ds[i] != 1) ? 0 : r;
    r *= dt[i];
  }
  int64_t idx = 0;
  for (int64_t n = 0; n < ds[0]; ++n)
    for (int64_t c = 0; c < ds[1]; ++c)
      for (int64_t h = 0; h < ds[2]; ++h)
        for (int64_t w = 0; w < ds[3]; ++w)
          out[n * st[0] + c * st[1] + h * st[2] + w * st[3]] += src[idx++];
  return out;
}

// ---- elementwise adjoints --------------------------------------------------

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    T s = sigmoid_scalar(x[i]);
    dx[i] = dy[i] * s * (T(1) - s);
  }
  return dx;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    T s = sigmoid_scalar(x[i]);
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
  return dx;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy, int axis = 1) {
  detail::check_axis(axis);
  auto d = detail::dims_of(y.shape());
  std::array<int64_t, 4> stride{};
  int64_t r = 1;
  for (int i = 3; i >= 0; --i) {
    stride[i] = r;
    r *= d[i];
  }
  const int64_t len = d[static_cast<size_t>(axis)];
  const int64_t step = stride[static_cast<size_t>(axis)];
  Tensor<T> dx(y.shape());
  auto outer = d;
  outer[static_cast<size_t>(axis)] = 1;
  for (int64_t n = 0; n < outer[0]; ++n)
    for (int64_t c = 0; c < outer[1]; ++c)
      for (int64_t h = 0; h < outer[2]; ++h)
        for (int64_t w = 0; w < outer[3]; ++w) {
          const int64_t base = n * stride[0] + c * stride[1] + h * stride[2] + w * stride[3];
          T dot = 0;
          for (int64_t i = 0; i < len; ++i) dot += dy[base + i * step] * y[base + i * step];
          for (int64_t i = 0; i < len; ++i)
            dx[base + i * step] = y[base + i * step] * (dy[base + i * step] - dot);
        }
  return dx;
}

// ---- conv ------------------------------------------------------------------

template <typename T>
struct Conv2dGrads {
  Tensor<T> dx, dweight;
  std::vector<T> dbias;  // empty when the forward had no bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias,
                               const Conv2dAttrs& attrs, const Tensor<T>& dy) {
  Shape os = conv2d_out_shape(x.shape(), weight.shape(), attrs);
  if (!(dy.shape() == os))
    throw ShapeError("conv2d_backward: grad shape " + dy.shape().str() + " != output " + os.str());
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  const int64_t cpg_in = xs.c / attrs.groups;
  const int64_t cpg_out = ws.n / attrs.groups;
  Conv2dGrads<T> out{Tensor<T>(xs, T(0)), Tensor<T>(ws, T(0)),
                     has_bias ? std::vector<T>(static_cast<size_t>(ws.n), T(0)) : std::vector<T>{}};
  for (int64_t n = 0; n < os.n; ++n)
    for (int64_t co = 0; co < os.c; ++co) {
      const int64_t g = co / cpg_out;
      for (int64_t oh = 0; oh < os.h; ++oh)
        for (int64_t ow = 0; ow < os.w; ++ow) {
          const T gy = dy.at(n, co, oh, ow);
          if (has_bias) out.dbias[static_cast<size_t>(co)] += gy;
          for (int64_t ci = 0; ci < cpg_in; ++ci)
            for (int64_t kh = 0; kh < ws.h; ++kh) {
              const int64_t ih = oh * attrs.stride - attrs.padding + kh;
              if (ih < 0 || ih >= xs.h) continue;
              for (int64_t kw = 0; kw < ws.w; ++kw) {
                const int64_t iw = ow * attrs.stride - attrs.padding + kw;
                if (iw < 0 || iw >= xs.w) continue;
                out.dx.at(n, g * cpg_in + ci, ih, iw) += gy * weight.at(co, ci, kh, kw);
                out.dweight.at(co, ci, kh, kw) += gy * x.at(n, g * cpg_in + ci, ih, iw);
              }
            }
        }
    }
  return out;
}

// ---- normalization adjoints -------------------------------------------------

template <typename T>
struct NormGrads {
  Tensor<T> dx;
  std::vector<T> dgamma, dbeta;
};

// Inference-mode batchnorm: running stats are constants, so this is just an
// affine map per channel.
template <typename T>
NormGrads<T> batchnorm_infer_backward(const Tensor<T>& x, const BnParams<T>& bn,
                                      const Tensor<T>& dy) {
  const Shape& s = x.shape();
  NormGrads<T> g{Tensor<T>(s), std::vector<T>(static_cast<size_t>(s.c), T(0)),
                 std::vector<T>(static_cast<size_t>(s.c), T(0))};
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const T inv = T(1) / std::sqrt(bn.var[static_cast<size_t>(c)] + bn.eps);
      const T scale = bn.gamma[static_cast<size_t>(c)] * inv;
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w) {
          const T gy = dy.at(n, c, h, w);
          g.dx.at(n, c, h, w) = gy * scale;
          g.dgamma[static_cast<size_t>(c)] +=
              gy * (x.at(n, c, h, w) - bn.mean[static_cast<size_t>(c)]) * inv;
          g.dbeta[static_cast<size_t>(c)] += gy;
        }
    }
  return g;
}

template <typename T>
NormGrads<T> group_norm_backward(const Tensor<T>& x, int num_groups, const std::vector<T>& gamma,
                                 const Tensor<T>& dy, T eps = static_cast<T>(1e-5)) {
  const Shape& s = x.shape();
  const int64_t cpg = s.c / num_groups;
  const int64_t plane = s.h * s.w;
  const int64_t m = cpg * plane;
  NormGrads<T> g{Tensor<T>(s), std::vector<T>(static_cast<size_t>(s.c), T(0)),
                 std::vector<T>(static_cast<size_t>(s.c), T(0))};
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t gi = 0; gi < num_groups; ++gi) {
      const T* xb = x.data() + (n * s.c + gi * cpg) * plane;
      const T* dyb = dy.data() + (n * s.c + gi * cpg) * plane;
      T* dxb = g.dx.data() + (n * s.c + gi * cpg) * plane;
      T mean = 0;
      for (int64_t i = 0; i < m; ++i) mean += xb[i];
      mean /= static_cast<T>(m);
      T var = 0;
      for (int64_t i = 0; i < m; ++i) {
        T d = xb[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(m);
      const T inv = T(1) / std::sqrt(var + eps);
      // dL/dxhat, then the standard whitening adjoint
      T sum_gx = 0, sum_gxx = 0;
      for (int64_t i = 0; i < m; ++i) {
        const T xhat = (xb[i] - mean) * inv;
        const T gxh = dyb[i] * gamma[static_cast<size_t>(gi * cpg + i / plane)];
        sum_gx += gxh;
        sum_gxx += gxh * xhat;
        g.dgamma[static_cast<size_t>(gi * cpg + i / plane)] += dyb[i] * xhat;
        g.dbeta[static_cast<size_t>(gi * cpg + i / plane)] += dyb[i];
      }
      const T mg = sum_gx / static_cast<T>(m);
      const T mgx = sum_gxx / static_cast<T>(m);
      for (int64_t i = 0; i < m; ++i) {
        const T xhat = (xb[i] - mean) * inv;
        const T gxh = dyb[i] * gamma[static_cast<size_t>(gi * cpg + i / plane)];
        dxb[i] = inv * (gxh - mg - xhat * mgx);
      }
    }
  return g;
}

// ---- pooling / layout adjoints ----------------------------------------------

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& in_shape, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  const int64_t plane = in_shape.h * in_shape.w;
  for (int64_t n = 0; n < in_shape.n; ++n)
    for (int64_t c = 0; c < in_shape.c; ++c) {
      const T v = dy.at(n, c, 0, 0) / static_cast<T>(plane);
      T* dst = dx.data() + (n * in_shape.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = v;
    }
  return dx;
}

template <typename T>
Tensor<T> avg_pool_w_backward(const Shape& in_shape, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  for (int64_t n = 0; n < in_shape.n; ++n)
    for (int64_t c = 0; c < in_shape.c; ++c)
      for (int64_t h = 0; h < in_shape.h; ++h) {
        const T v = dy.at(n, c, h, 0) / static_cast<T>(in_shape.w);
        for (int64_t w = 0; w < in_shape.w; ++w) dx.at(n, c, h, w) = v;
      }
  return dx;
}

template <typename T>
Tensor<T> avg_pool_h_backward(const Shape& in_shape, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  for (int64_t n = 0; n < in_shape.n; ++n)
    for (int64_t c = 0; c < in_shape.c; ++c)
      for (int64_t w = 0; w < in_shape.w; ++w) {
        const T v = dy.at(n, c, 0, w) / static_cast<T>(in_shape.h);
        for (int64_t h = 0; h < in_shape.h; ++h) dx.at(n, c, h, w) = v;
      }
  return dx;
}

// Routes grad to the first window tap achieving the max, matching the
// forward's std::max tie behavior.
template <typename T>
Tensor<T> max_pool_backward(const Tensor<T>& x, int k, int stride, int padding,
                            const Tensor<T>& dy) {
  const Shape& s = x.shape();
  Tensor<T> dx(s, T(0));
  const Shape& os = dy.shape();
  for (int64_t n = 0; n < os.n; ++n)
    for (int64_t c = 0; c < os.c; ++c)
      for (int64_t oh = 0; oh < os.h; ++oh)
        for (int64_t ow = 0; ow < os.w; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t bh = -1, bw = -1;
          for (int kh = 0; kh < k; ++kh) {
            int64_t ih = oh * stride - padding + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              int64_t iw = ow * stride - padding + kw;
              if (iw < 0 || iw >= s.w) continue;
              if (x.at(n, c, ih, iw) > best) {
                best = x.at(n, c, ih, iw);
                bh = ih;
                bw = iw;
              }
            }
          }
          if (bh >= 0) dx.at(n, c, bh, bw) += dy.at(n, c, oh, ow);
        }
  return dx;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Shape& in_shape, int scale, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape, T(0));
  for (int64_t n = 0; n < dy.shape().n; ++n)
    for (int64_t c = 0; c < dy.shape().c; ++c)
      for (int64_t h = 0; h < dy.shape().h; ++h)
        for (int64_t w = 0; w < dy.shape().w; ++w)
          dx.at(n, c, h / scale, w / scale) += dy.at(n, c, h, w);
  return dx;
}

// ---- sampling adjoint --------------------------------------------------------

template <typename T>
struct GridSampleGrads {
  Tensor<T> dx;
  Grid<T> dgrid;
};

template <typename T>
GridSampleGrads<T> grid_sample_bilinear_backward(const Tensor<T>& x, const Grid<T>& grid,
                                                 const Tensor<T>& dy) {
  const Shape& s = x.shape();
  GridSampleGrads<T> out{Tensor<T>(s, T(0)), Grid<T>(grid.n, grid.h, grid.w)};
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
        T dpx = 0, dpy = 0;
        for (int64_t c = 0; c < s.c; ++c) {
          const T g = dy.at(n, c, gh, gw);
          const T v00 = x.at(n, c, y0, x0);
          const T v01 = x.at(n, c, y0, x1);
          const T v10 = x.at(n, c, y1, x0);
          const T v11 = x.at(n, c, y1, x1);
          out.dx.at(n, c, y0, x0) += g * (T(1) - ay) * (T(1) - ax);
          out.dx.at(n, c, y0, x1) += g * (T(1) - ay) * ax;
          out.dx.at(n, c, y1, x0) += g * ay * (T(1) - ax);
          out.dx.at(n, c, y1, x1) += g * ay * ax;
          dpx += g * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
          dpy += g * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
        }
        // px = ((u+1)*W - 1)/2, so du = dpx * W/2
        out.dgrid.x(n, gh, gw) = dpx * static_cast<T>(s.w) / T(2);
        out.dgrid.y(n, gh, gw) = dpy * static_cast<T>(s.h) / T(2);
      }
  return out;
}

// ---- matmul adjoint -----------------------------------------------------------

template <typename T>
struct MatmulGrads {
  Tensor<T> da, db;
};

template <typename T>
MatmulGrads<T> matmul_batched_backward(const Tensor<T>& a, const Tensor<T>& b,
                                       const Tensor<T>& dy) {
  return {matmul_batched(dy, transpose_hw(b)), matmul_batched(transpose_hw(a), dy)};
}

// ---- finite-difference checking ------------------------------------------------

// A differentiable map from a list of f64 tensors to one f64 tensor, with an
// explicit adjoint. `backward` receives the inputs and dL/d(output) and must
// return dL/d(input) for every input, in order.
struct GradCheckProblem {
  std::string op_name;
  std::vector<TensorD> inputs;
  std::function<TensorD(const std::vector<TensorD>&)> forward;
  std::function<std::vector<TensorD>(const std::vector<TensorD>&, const TensorD&)> backward;
};

// Checks the analytic adjoint against central differences of the scalar loss
// L = sum(W * forward(inputs)) with W drawn once from `weight_seed`. Relative
// error per scalar is |a - n| / (|a| + |n| + 1e-12).
inline GradCheckReport gradcheck(const GradCheckProblem& p, uint64_t weight_seed,
                                 double step = 1e-5) {
  int64_t total = 0;
  for (const auto& t : p.inputs) total += t.numel();
  if (total > 1000)
    throw ArgError("gradcheck: " + p.op_name + " has " + std::to_string(total) +
                   " input scalars; keep problems at or below 1000");
  std::vector<TensorD> inputs = p.inputs;
  TensorD out = p.forward(inputs);
  TensorD w = random_uniform<double>(out.shape(), weight_seed, -1.0, 1.0);
  auto loss = [&](const TensorD& o) {
    double acc = 0;
    for (int64_t i = 0; i < o.numel(); ++i) acc += w[i] * o[i];
    return acc;
  };
  std::vector<TensorD> analytic = p.backward(inputs, w);
  if (analytic.size() != inputs.size())
    throw ArgError("gradcheck: " + p.op_name + " backward returned " +
                   std::to_string(analytic.size()) + " grads for " +
                   std::to_string(inputs.size()) + " inputs");
  GradCheckReport rep{p.op_name, 0.0, 0.0, total};
  for (size_t t = 0; t < inputs.size(); ++t) {
    if (!(analytic[t].shape() == inputs[t].shape()))
      throw ShapeError("gradcheck: " + p.op_name + " grad " + std::to_string(t) + " shape " +
                       analytic[t].shape().str() + " != input " + inputs[t].shape().str());
    for (int64_t i = 0; i < inputs[t].numel(); ++i) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + step;
      const double lp = loss(p.forward(inputs));
      inputs[t][i] = orig - step;
      const double lm = loss(p.forward(inputs));
      inputs[t][i] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double exact = analytic[t][i];
      const double abs_err = std::abs(exact - numeric);
      const double rel = abs_err / (std::abs(exact) + std::abs(numeric) + 1e-12);
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
  }
  return rep;
}

}  // namespace fdm

#endif  // FDM_GRAD_HPP
