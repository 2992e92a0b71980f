#include "disent/tensor.hpp"

#include <cmath>
#include <cstring>

namespace disent {

Tensor Tensor::of(std::size_t rows, std::size_t cols,
                  std::initializer_list<double> vals) {
  Tensor t(rows, cols);
  if (vals.size() != t.numel())
    throw ShapeError("Tensor::of: " + std::to_string(vals.size()) +
                     " values for shape " + t.shape_str());
  std::copy(vals.begin(), vals.end(), t.data_.begin());
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item: tensor of shape " + shape_str() + " is not scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bit_equal(const Tensor& o) const {
  if (!same_shape(o)) return false;
  return std::memcmp(data_.data(), o.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

std::string Tensor::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

}  // namespace disent
