#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "conet/rng.hpp"

namespace conet {

/// Dense real vector (64-bit).
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  operator std::span<const double>() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

/// Dense row-major real matrix (64-bit).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Throws ConfigError when data.size() != rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// W·a + b. Throws ConfigError on dimension mismatch.
Vector affine(const Matrix& w, std::span<const double> b, std::span<const double> a);

Vector relu(std::span<const double> a);

/// Logistic function, stable over the whole finite range.
double sigmoid(double x);

/// i.i.d. N(0, stddev^2) entries drawn row-major from rng.
Matrix gaussian_init(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 0.01);

/// Central differences (f(θ+εe_i) − f(θ−εe_i)) / 2ε for every coordinate.
/// Throws NumericError if f returns a non-finite value.
Vector finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> theta, double epsilon);

// In-place kernels used by the model passes. Shapes are the caller's
// responsibility; callers validate once at construction.

/// out += W·a
void gemv_add(const Matrix& w, std::span<const double> a, std::span<double> out);
/// out += Wᵀ·g
void gemv_transpose_add(const Matrix& w, std::span<const double> g, std::span<double> out);
/// W += scale · g·aᵀ
void outer_add(std::span<const double> g, std::span<const double> a, Matrix& w,
               double scale = 1.0);
/// out += scale · x
void axpy(double scale, std::span<const double> x, std::span<double> out);
double dot(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> values);

}  // namespace conet
