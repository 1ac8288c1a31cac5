#pragma once

// Dense vectors and matrices in double precision, the activations used by the
// recurrent cells, a counter-based seeded generator, and a central
// finite-difference gradient estimator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idn/errors.hpp"

namespace idn {

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec(std::initializer_list<double> values) : data_(values) {}
  explicit Vec(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Vec&, const Vec&) = default;

 private:
  std::vector<double> data_;
};

/// Row-major matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Mat: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                       " needs " + std::to_string(rows_ * cols_) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
inline void require_matvec(const Mat& w, std::size_t x_len, std::string_view what) {
  if (w.cols() != x_len) {
    throw ShapeError(std::string(what) + ": matrix is " + shape_str(w) +
                     " but vector has length " + std::to_string(x_len));
  }
}
}  // namespace detail

/// y += W x
inline void matvec_acc(const Mat& w, std::span<const double> x, std::span<double> y) {
  detail::require_matvec(w, x.size(), "matvec");
  if (y.size() != w.rows()) {
    throw ShapeError("matvec: matrix is " + shape_str(w) + " but output has length " +
                     std::to_string(y.size()));
  }
  const std::size_t n = w.cols();
  const double* wp = w.span().data();
  for (std::size_t i = 0; i < w.rows(); ++i, wp += n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wp[j] * x[j];
    y[i] += acc;
  }
}

/// dx += W^T dy
inline void matvec_t_acc(const Mat& w, std::span<const double> dy, std::span<double> dx) {
  if (dy.size() != w.rows() || dx.size() != w.cols()) {
    throw ShapeError("matvec_t: matrix is " + shape_str(w) + ", got dy of length " +
                     std::to_string(dy.size()) + " and dx of length " + std::to_string(dx.size()));
  }
  const std::size_t n = w.cols();
  const double* wp = w.span().data();
  for (std::size_t i = 0; i < w.rows(); ++i, wp += n) {
    const double d = dy[i];
    if (d == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) dx[j] += wp[j] * d;
  }
}

/// dW += dy x^T
inline void outer_acc(std::span<const double> dy, std::span<const double> x, Mat& dw) {
  if (dy.size() != dw.rows() || x.size() != dw.cols()) {
    throw ShapeError("outer: gradient is " + shape_str(dw) + ", got dy of length " +
                     std::to_string(dy.size()) + " and x of length " + std::to_string(x.size()));
  }
  const std::size_t n = dw.cols();
  double* gp = dw.span().data();
  for (std::size_t i = 0; i < dw.rows(); ++i, gp += n) {
    const double d = dy[i];
    if (d == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) gp[j] += d * x[j];
  }
}

/// y = W x (+ b)
inline Vec linear(const Mat& w, const Vec& x, const Vec* b = nullptr) {
  detail::require_matvec(w, x.size(), "linear");
  Vec y(w.rows());
  if (b != nullptr) {
    if (b->size() != w.rows()) {
      throw ShapeError("linear: matrix is " + shape_str(w) + " but bias has length " +
                       std::to_string(b->size()));
    }
    y = *b;
  }
  matvec_acc(w, x.span(), y.span());
  return y;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Activations

inline double sigmoid(double x) noexcept {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {
inline void require_nonempty(const Vec& x, std::string_view what) {
  if (x.empty()) throw ShapeError(std::string(what) + ": empty input");
}
}  // namespace detail

inline Vec sigmoid(const Vec& x) {
  detail::require_nonempty(x, "sigmoid");
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

inline Vec tanh(const Vec& x) {
  detail::require_nonempty(x, "tanh");
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

inline Vec relu(const Vec& x) {
  detail::require_nonempty(x, "relu");
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Max-shifted softmax.
inline Vec softmax(const Vec& x) {
  detail::require_nonempty(x, "softmax");
  const double mx = *std::max_element(x.begin(), x.end());
  Vec y(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    s += y[i];
  }
  for (double& v : y) v /= s;
  return y;
}

// ---------------------------------------------------------------------------
// Seeded randomness

/// Counter-based generator: draw i is splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15).
///
/// The stream depends only on (seed, counter), so it is identical on every
/// platform and any position can be reached without replaying earlier draws.
/// Normal draws use Box-Muller on two consecutive uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  /// A generator for an independent named sub-stream, e.g. `rng.fork(epoch)`.
  Rng fork(std::uint64_t stream) const noexcept {
    return Rng(mix(seed_ ^ mix(stream + 0x632BE59BD9B4E019ULL)));
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix(seed_ + counter_ * kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Glorot-uniform fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Mat& w, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (double& v : w.span()) v = rng.uniform(-a, a);
}

// ---------------------------------------------------------------------------
// Parameter views and finite differences

/// A named, shaped window onto trainable storage. Biases are rows x 1.
struct ConstParamView {
  std::string_view name;
  std::size_t rows;
  std::size_t cols;
  std::span<const double> values;
};

struct ParamView {
  std::string_view name;
  std::size_t rows;
  std::size_t cols;
  std::span<double> values;

  operator ConstParamView() const { return {name, rows, cols, values}; }
};

inline ParamView view(std::string_view name, Mat& m) {
  return {name, m.rows(), m.cols(), m.span()};
}
inline ParamView view(std::string_view name, Vec& v) { return {name, v.size(), 1, v.span()}; }
inline ConstParamView view(std::string_view name, const Mat& m) {
  return {name, m.rows(), m.cols(), m.span()};
}
inline ConstParamView view(std::string_view name, const Vec& v) {
  return {name, v.size(), 1, v.span()};
}

/// Central-difference gradient of `f` with respect to every entry of `theta`.
///
/// `theta` is perturbed in place and restored bitwise after each coordinate.
template <class F>
std::vector<double> fd_gradient(F&& f, std::span<double> theta, double eps = 1e-5,
                                std::string_view label = "theta") {
  if (!(eps > 0.0)) throw NumericError("fd_gradient: eps must be positive");
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + eps;
    const double up = f();
    theta[i] = saved - eps;
    const double down = f();
    theta[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("fd_gradient: non-finite objective at " + std::string(label) + "[" +
                         std::to_string(i) + "]");
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// Relative discrepancy |a - n| / max(|a|, |n|, floor).
///
/// The floor turns the check absolute for entries whose true value is below
/// it, where central differences carry roundoff of the same order.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace idn
