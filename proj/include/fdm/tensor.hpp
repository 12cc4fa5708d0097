#ifndef FDM_TENSOR_HPP
#define FDM_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdm {

// Thrown when tensor shapes do not line up. The message always names the
// offending shapes so graph-level errors can point at the exact mismatch.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ArgError : public std::invalid_argument {
 public:
  explicit ArgError(const std::string& msg) : std::invalid_argument(msg) {}
};

enum class DType : uint8_t { F32 = 0, F64 = 1 };

// Dense NCHW shape. All entries are >= 1.
struct Shape {
  int64_t n = 1, c = 1, h = 1, w = 1;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape& o) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

inline void check_shape_valid(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
    throw ShapeError("shape entries must be >= 1, got " + s.str());
}

// Dense row-major NCHW tensor over f32 or f64 scalars.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s) {
    check_shape_valid(s);
    data_.assign(static_cast<size_t>(s.numel()), fill);
  }
  Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
    check_shape_valid(s);
    if (static_cast<int64_t>(data_.size()) != s.numel())
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + s.str());
  }

  static constexpr DType dtype() { return sizeof(T) == 4 ? DType::F32 : DType::F64; }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& buffer() { return data_; }
  const std::vector<T>& buffer() const { return data_; }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  // Row-major reinterpretation; element count must be preserved.
  Tensor reshaped(Shape s) const {
    if (s.numel() != shape_.numel())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    Tensor out;
    out.shape_ = s;
    out.data_ = data_;
    return out;
  }
  Tensor&& reshaped_inplace(Shape s) && {
    if (s.numel() != shape_.numel())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    shape_ = s;
    return std::move(*this);
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
  template <typename U>
  friend class Tensor;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Sampling positions for bilinear grid sampling: one (x, y) pair per output
// pixel, in normalized [-1, 1] coordinates. Values outside the range are
// permitted and clamp at sample time.
template <typename T>
struct Grid {
  int64_t n = 0, h = 0, w = 0;
  std::vector<T> data;  // layout (n, h, w, 2), last axis = (x, y)

  Grid() = default;
  Grid(int64_t n_, int64_t h_, int64_t w_)
      : n(n_), h(h_), w(w_), data(static_cast<size_t>(n_ * h_ * w_ * 2), T(0)) {}

  T& x(int64_t ni, int64_t hi, int64_t wi) { return data[((ni * h + hi) * w + wi) * 2 + 0]; }
  T& y(int64_t ni, int64_t hi, int64_t wi) { return data[((ni * h + hi) * w + wi) * 2 + 1]; }
  T x(int64_t ni, int64_t hi, int64_t wi) const { return data[((ni * h + hi) * w + wi) * 2 + 0]; }
  T y(int64_t ni, int64_t hi, int64_t wi) const { return data[((ni * h + hi) * w + wi) * 2 + 1]; }
};

using GridF = Grid<float>;
using GridD = Grid<double>;

// Result of one analytic-vs-finite-difference comparison.
struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int64_t points_checked = 0;
};

// Portable deterministic RNG (splitmix64). Kernel and weight initialization
// must give bit-identical streams on every platform, which the standard
// distributions do not guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  // Uniform in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

 private:
  uint64_t state_;
};

template <typename T>
Tensor<T> random_uniform(Shape s, uint64_t seed, T lo = T(-0.1), T hi = T(0.1)) {
  Tensor<T> t(s);
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.next_uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return t;
}

// FNV-1a over the raw scalar bytes; used for output manifests and
// determinism checks.
template <typename T>
uint64_t checksum(const Tensor<T>& t) {
  uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
  size_t len = static_cast<size_t>(t.numel()) * sizeof(T);
  for (size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

#ifndef NDEBUG
#define FDM_DEBUG_CHECK_FINITE(t, opname)                                 \
  do {                                                                     \
    assert((t).all_finite() && "non-finite output from kernel " opname);   \
  } while (0)
#else
#define FDM_DEBUG_CHECK_FINITE(t, opname) \
  do {                                    \
  } while (0)
#endif

}  // namespace fdm

#endif  // FDM_TENSOR_HPP
