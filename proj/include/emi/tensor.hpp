#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "emi/error.hpp"

namespace emi {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Extents are always positive; a tensor
// with no elements is represented by a default-constructed (rank-0, empty)
// value and is never produced by an operation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor from(std::initializer_list<double> values);
  static Tensor from(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D element access, row-major.
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_.back() + col]; }
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_.back() + col]; }

  // Same data, new extents; element count must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws DimensionError naming both shapes unless they are identical.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
// Throws NumericError if any element is NaN/Inf.
void require_finite(const Tensor& t, const char* where);

}  // namespace emi
