#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ldrps {

/// NCHW extents. Vectors and scalars use trailing unit dimensions.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t per_sample() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major NCHW array of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  /// Pointer to the start of sample n.
  double* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.per_sample(); }
  const double* sample(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.per_sample();
  }

  double item() const;
  void fill(double v);
  Tensor reshaped(Shape shape) const;

  /// Samples [begin, begin+count) as a new tensor.
  Tensor slice_batch(int begin, int count) const;
  static Tensor concat_batch(const Tensor& a, const Tensor& b);

  bool all_finite() const;
  double max_abs() const;

 private:
  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_;
  std::vector<double> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace ldrps
