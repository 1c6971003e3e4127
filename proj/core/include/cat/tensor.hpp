#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cat/error.hpp"

namespace cat {

/// Dense row-major matrix. Rows are frames (time) throughout the library.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    require(data_.size() == rows_ * cols_, "Matrix: value count does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void append_row(std::span<const T> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    require(values.size() == cols_, "Matrix::append_row: width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <typename To, typename From>
Matrix<To> matrix_cast(const Matrix<From>& m) {
  Matrix<To> out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace cat
