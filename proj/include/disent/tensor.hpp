#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace disent {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every tensor buffer gets the same (cache-line) alignment so Eigen's
// vectorized kernels pick identical code paths for identical values; with
// malloc's weaker guarantee, reductions over fresh allocations could differ
// in the last bit and break bitwise-reproducibility contracts.
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(alignment));
  }
  friend bool operator==(const AlignedAlloc&, const AlignedAlloc&) {
    return true;
  }
  friend bool operator!=(const AlignedAlloc&, const AlignedAlloc&) {
    return false;
  }
};

// Dense row-major matrix of doubles. Scalars are 1x1. Immutable by
// convention once handed to the graph; mutation helpers exist for
// construction and optimizer updates.
class Tensor {
 public:
  using Map = Eigen::Map<
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                  Eigen::Dynamic,
                                                  Eigen::RowMajor>>;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor(rows, cols);
  }
  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    Tensor t(rows, cols);
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return full(1, 1, v); }
  static Tensor of(std::size_t rows, std::size_t cols,
                   std::initializer_list<double> vals);
  static Tensor row(std::initializer_list<double> vals) {
    return of(1, vals.size(), vals);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  // scalar access; throws unless 1x1
  double item() const;

  Map map() {
    return Map(data_.data(), static_cast<Eigen::Index>(rows_),
               static_cast<Eigen::Index>(cols_));
  }
  ConstMap map() const {
    return ConstMap(data_.data(), static_cast<Eigen::Index>(rows_),
                    static_cast<Eigen::Index>(cols_));
  }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  bool all_finite() const;
  bool bit_equal(const Tensor& o) const;

  std::string shape_str() const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double, AlignedAlloc<double>> data_;
};

// throws ShapeError naming both shapes if a and b differ
void require_same_shape(const char* op, const Tensor& a, const Tensor& b);

}  // namespace disent
