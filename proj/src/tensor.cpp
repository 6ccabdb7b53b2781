#include "adrm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "adrm/error.hpp"

namespace adrm {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  require(values_.size() == shape_size(shape_),
          "tensor data size " + std::to_string(values_.size()) + " does not match shape " + shape_string(shape_));
}

std::size_t Tensor::row_size() const {
  require(!shape_.empty() && shape_[0] > 0, "row access on a tensor without rows");
  return values_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t n = row_size();
  return std::span<double>(values_).subspan(i * n, n);
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t n = row_size();
  return std::span<const double>(values_).subspan(i * n, n);
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  require(!shape_.empty(), "gather_rows on a scalar tensor");
  Shape out_shape = shape_;
  out_shape[0] = indices.size();
  Tensor out(out_shape);
  const std::size_t n = shape_size(Shape(shape_.begin() + 1, shape_.end()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    require(indices[k] < shape_[0], "gather index out of range");
    std::memcpy(out.data() + k * n, data() + indices[k] * n, n * sizeof(double));
  }
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == values_.size(), "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_rows(std::span<const Tensor* const> parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  Shape shape = parts.front()->shape();
  require(!shape.empty(), "concat_rows on scalar tensors");
  std::size_t rows = 0;
  for (const Tensor* p : parts) {
    require(p->rank() == shape.size() && std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1),
            "concat_rows: trailing dimensions differ");
    rows += p->dim(0);
  }
  shape[0] = rows;
  std::vector<double> values;
  values.reserve(shape_size(shape));
  for (const Tensor* p : parts) values.insert(values.end(), p->storage().begin(), p->storage().end());
  return Tensor(std::move(shape), std::move(values));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const Tensor* parts[] = {&a, &b};
  return concat_rows(parts);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace adrm
