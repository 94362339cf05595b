#include "conet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conet/error.hpp"

namespace conet {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ConfigError("matrix data length " + std::to_string(data_.size()) +
                      " does not match shape " + std::to_string(rows_) + "x" +
                      std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vector affine(const Matrix& w, std::span<const double> b, std::span<const double> a) {
  if (w.cols() != a.size() || w.rows() != b.size()) {
    throw ConfigError("affine: W is " + std::to_string(w.rows()) + "x" +
                      std::to_string(w.cols()) + ", a has " + std::to_string(a.size()) +
                      ", b has " + std::to_string(b.size()));
  }
  Vector out(std::vector<double>(b.begin(), b.end()));
  gemv_add(w, a, out.values());
  return out;
}

Vector relu(std::span<const double> a) {
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix gaussian_init(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = stddev * rng.normal();
  return m;
}

Vector finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> theta, double epsilon) {
  std::vector<double> point(theta.begin(), theta.end());
  Vector grad(theta.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = point[i];
    point[i] = original + epsilon;
    const double plus = f(point);
    point[i] = original - epsilon;
    const double minus = f(point);
    point[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite difference: non-finite objective at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (plus - minus) / (2.0 * epsilon);
  }
  return grad;
}

namespace {

// Four interleaved partial sums, combined as (s0 + s1) + (s2 + s3).
// The summation order is fixed, so results do not depend on the compiler.
double dot_kernel(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += x[k] * y[k];
    s1 += x[k + 1] * y[k + 1];
    s2 += x[k + 2] * y[k + 2];
    s3 += x[k + 3] * y[k + 3];
  }
  for (; k < n; ++k) s0 += x[k] * y[k];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

void gemv_add(const Matrix& w, std::span<const double> a, std::span<double> out) {
  const std::size_t cols = w.cols();
  const double* row = w.values().data();
  for (std::size_t r = 0; r < w.rows(); ++r, row += cols) out[r] += dot_kernel(row, a.data(), cols);
}

void gemv_transpose_add(const Matrix& w, std::span<const double> g, std::span<double> out) {
  const std::size_t cols = w.cols();
  const double* row = w.values().data();
  for (std::size_t r = 0; r < w.rows(); ++r, row += cols) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * gr;
  }
}

void outer_add(std::span<const double> g, std::span<const double> a, Matrix& w, double scale) {
  const std::size_t cols = w.cols();
  double* row = w.values().data();
  for (std::size_t r = 0; r < w.rows(); ++r, row += cols) {
    const double gr = scale * g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) row[c] += gr * a[c];
  }
}

void axpy(double scale, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += scale * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  return dot_kernel(a.data(), b.data(), a.size());
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace conet
