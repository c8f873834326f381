#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace recot {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Throws NumericError naming `where` if any value is NaN or infinite.
void require_finite(std::span<const double> values, std::string_view where);

// Dense row-major array of 64-bit floats. Rank 0 is a scalar.
// Every extent is positive and every stored value is finite.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; the index list length must equal rank().
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  // Value of a one-element tensor.
  double item() const;

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(double value);

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// Bitwise equality of shape and payload (distinguishes -0.0 from 0.0).
bool bit_equal(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);
// dot / sqrt(|a|^2 |b|^2), clamped to [-1, 1]; 0 when either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace recot
