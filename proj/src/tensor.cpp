#include "ldrps/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ldrps/errors.hpp"

namespace ldrps {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw UsageError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != data_.size()) {
    throw UsageError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

Tensor Tensor::slice_batch(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > shape_.n) {
    throw UsageError("batch slice out of range for " + shape_.str());
  }
  Shape s = shape_;
  s.n = count;
  const auto ps = shape_.per_sample();
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * ps),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * ps));
  return Tensor(s, std::move(out));
}

Tensor Tensor::concat_batch(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.c != sb.c || sa.h != sb.h || sa.w != sb.w) {
    throw UsageError("concat_batch shape mismatch " + sa.str() + " vs " + sb.str());
  }
  Shape s = sa;
  s.n = sa.n + sb.n;
  std::vector<double> out;
  out.reserve(s.size());
  out.insert(out.end(), a.vec().begin(), a.vec().end());
  out.insert(out.end(), b.vec().begin(), b.vec().end());
  return Tensor(s, std::move(out));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw UsageError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace ldrps
