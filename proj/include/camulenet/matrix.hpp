#pragma once

#include <cstddef>
#include <vector>

namespace camulenet {

// Dense row-major matrix for feature planes (not part of the autodiff tape).
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), values(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool empty() const { return values.empty(); }
  const T* row(std::size_t r) const { return values.data() + r * cols; }
  T* row(std::size_t r) { return values.data() + r * cols; }

  template <class U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
    return out;
  }

  bool operator==(const Matrix&) const = default;
};

}  // namespace camulenet
