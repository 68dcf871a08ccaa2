#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cmda/errors.hpp"

namespace cmda {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Eigen maps provide the math views; shapes of rank
// three are treated as batches of matrices throughout.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using VectorT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using ArrayT = Eigen::Array<S, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(shape_numel(shape_)), S(0)) {}
  Tensor(Shape shape, std::vector<S> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<Index>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor value count does not match shape " +
                                  shape_str(shape_));
  }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index numel() const { return static_cast<Index>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  Index last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  Index lead_rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  S operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  S& at(Index i, Index j) {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i * dim(1) + j)];
  }
  S at(Index i, Index j) const { return const_cast<Tensor*>(this)->at(i, j); }
  S& at(Index i, Index j, Index k) {
    assert(rank() == 3);
    return data_[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  S at(Index i, Index j, Index k) const {
    return const_cast<Tensor*>(this)->at(i, j, k);
  }

  Eigen::Map<MatrixT> mat(Index rows, Index cols) {
    assert(rows * cols == numel());
    return Eigen::Map<MatrixT>(data(), rows, cols);
  }
  Eigen::Map<const MatrixT> mat(Index rows, Index cols) const {
    assert(rows * cols == numel());
    return Eigen::Map<const MatrixT>(data(), rows, cols);
  }
  // View as (lead_rows, last_dim); the workhorse for rowwise ops.
  Eigen::Map<MatrixT> mat2d() { return mat(lead_rows(), last_dim()); }
  Eigen::Map<const MatrixT> mat2d() const { return mat(lead_rows(), last_dim()); }

  // Matrix slice b of a rank-3 batch.
  Eigen::Map<MatrixT> slice(Index b) {
    assert(rank() == 3);
    return Eigen::Map<MatrixT>(data() + b * dim(1) * dim(2), dim(1), dim(2));
  }
  Eigen::Map<const MatrixT> slice(Index b) const {
    assert(rank() == 3);
    return Eigen::Map<const MatrixT>(data() + b * dim(1) * dim(2), dim(1), dim(2));
  }

  Eigen::Map<ArrayT> arr() { return Eigen::Map<ArrayT>(data(), numel()); }
  Eigen::Map<const ArrayT> arr() const {
    return Eigen::Map<const ArrayT>(data(), numel());
  }
  Eigen::Map<VectorT> vec() { return Eigen::Map<VectorT>(data(), numel()); }
  Eigen::Map<const VectorT> vec() const {
    return Eigen::Map<const VectorT>(data(), numel());
  }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " +
                                  shape_str(s) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

}  // namespace cmda
