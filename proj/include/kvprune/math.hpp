#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kvprune/error.hpp"

namespace kvprune {

namespace detail {
inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw InvalidInput(std::string(what) + ": non-finite element");
    }
  }
}
}  // namespace detail

// Dense vector of 64-bit floats. Elements are validated finite at
// construction; downstream arithmetic never re-checks.
class Vec64 {
 public:
  Vec64() = default;
  explicit Vec64(std::vector<double> values) : values_(std::move(values)) {
    detail::require_finite(values_, "Vec64");
  }
  Vec64(std::initializer_list<double> values) : Vec64(std::vector<double>(values)) {}

  static Vec64 zeros(std::size_t n) {
    Vec64 v;
    v.values_.assign(n, 0.0);
    return v;
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  const double* data() const { return values_.data(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  const std::vector<double>& values() const { return values_; }

  bool operator==(const Vec64& other) const = default;

 private:
  std::vector<double> values_;
};

// Row-major dense matrix, finite-checked at construction.
class Mat64 {
 public:
  Mat64() = default;
  Mat64(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw InvalidInput("Mat64: data length " + std::to_string(data_.size()) +
                         " != rows*cols " + std::to_string(rows_ * cols_));
    }
    detail::require_finite(data_, "Mat64");
  }

  static Mat64 zeros(std::size_t rows, std::size_t cols) {
    return Mat64(rows, cols, std::vector<double>(rows * cols, 0.0));
  }
  static Mat64 identity(std::size_t n) {
    Mat64 m = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) m.data_[i * n + i] = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_.data() + r * cols_, cols_);
  }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class NormOrder { l1, l2, linf };

inline std::string_view norm_order_name(NormOrder p) {
  switch (p) {
    case NormOrder::l1: return "1";
    case NormOrder::l2: return "2";
    case NormOrder::linf: return "inf";
  }
  return "?";
}

inline NormOrder parse_norm_order(std::string_view s) {
  if (s == "1") return NormOrder::l1;
  if (s == "2") return NormOrder::l2;
  if (s == "inf" || s == "max") return NormOrder::linf;
  throw InvalidConfig("norm order must be 1, 2 or inf, got '" + std::string(s) + "'");
}

// lp norm with p in {1, 2, inf}. Summation is left-to-right so results are
// bit-reproducible across runs.
inline double lp_norm(const Vec64& v, NormOrder p) {
  if (v.empty()) throw InvalidInput("lp_norm: empty vector");
  switch (p) {
    case NormOrder::l1: {
      double s = 0.0;
      for (double x : v) s += std::fabs(x);
      return s;
    }
    case NormOrder::l2: {
      double s = 0.0;
      for (double x : v) s += x * x;
      return std::sqrt(s);
    }
    case NormOrder::linf: {
      double m = 0.0;
      for (double x : v) m = std::max(m, std::fabs(x));
      return m;
    }
  }
  throw InvalidInput("lp_norm: unknown norm order");
}

// Softmax with max-subtraction. Output sums to 1 (within rounding), every
// element strictly positive for finite input.
inline Vec64 stable_softmax(const Vec64& logits) {
  if (logits.empty()) throw InvalidInput("stable_softmax: empty input");
  double max_logit = logits[0];
  for (double x : logits) max_logit = std::max(max_logit, x);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return Vec64(std::move(out));
}

inline Vec64 matvec(const Mat64& m, const Vec64& v) {
  if (m.cols() != v.size()) {
    throw InvalidInput("matvec: cols " + std::to_string(m.cols()) + " != vector length " +
                       std::to_string(v.size()));
  }
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * v[c];
    out[r] = s;
  }
  return Vec64(std::move(out));
}

inline double dot(const Vec64& a, const Vec64& b) {
  if (a.size() != b.size()) {
    throw InvalidInput("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
  }
  if (a.empty()) throw InvalidInput("dot: empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// out += scale * v, in place.
inline void add_scaled(std::vector<double>& out, double scale, const Vec64& v) {
  for (std::size_t i = 0; i < v.size(); ++i) out[i] += scale * v[i];
}

}  // namespace kvprune
