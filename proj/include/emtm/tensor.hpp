#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "emtm/errors.hpp"
#include "emtm/rng.hpp"

namespace emtm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using VecXd = Eigen::VectorXd;
using ArrXd = Eigen::ArrayXd;
// All tensor data is row-major; matrix views must match.
using MatXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_to_string(const Shape& s);
Index shape_numel(const Shape& s);

// Dense real array: a shape over flat row-major 64-bit storage. Rank-2 views
// map onto Eigen matrices; elementwise work uses the flat array directly.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(ArrXd::Zero(checked_numel(shape_))) {}
  Tensor(Shape shape, ArrXd data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from_vector(std::vector<double> v) {
    Tensor t({static_cast<Index>(v.size())});
    for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<Index>(i)] = v[i];
    return t;
  }
  static Tensor from_matrix(const MatXd& m) {
    Tensor t({m.rows(), m.cols()});
    Eigen::Map<MatXd>(t.data(), m.rows(), m.cols()) = m;
    return t;
  }
  static Tensor random_normal(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = rng.normal(mean, stddev);
    return t;
  }
  static Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = rng.uniform(lo, hi);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  bool empty() const { return data_.size() == 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  ArrXd& array() { return data_; }
  const ArrXd& array() const { return data_; }

  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }
  double& at(Index i, Index j) { return data_[i * dim(1) + j]; }
  double at(Index i, Index j) const { return data_[i * dim(1) + j]; }
  double& at(Index i, Index j, Index k) { return data_[(i * dim(1) + j) * dim(2) + k]; }
  double at(Index i, Index j, Index k) const { return data_[(i * dim(1) + j) * dim(2) + k]; }

  // Rank-2 matrix view over the row-major storage.
  Eigen::Map<MatXd> mat() {
    require_rank(2);
    return Eigen::Map<MatXd>(data_.data(), shape_[0], shape_[1]);
  }
  Eigen::Map<const MatXd> mat() const {
    require_rank(2);
    return Eigen::Map<const MatXd>(data_.data(), shape_[0], shape_[1]);
  }
  // Any-rank view as a (rows x cols) matrix; caller asserts the factorization.
  Eigen::Map<MatXd> as_mat(Index rows, Index cols) {
    if (rows * cols != size())
      throw DimensionError("cannot view " + shape_to_string(shape_) + " as " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    return Eigen::Map<MatXd>(data_.data(), rows, cols);
  }
  Eigen::Map<const MatXd> as_mat(Index rows, Index cols) const {
    if (rows * cols != size())
      throw DimensionError("cannot view " + shape_to_string(shape_) + " as " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    return Eigen::Map<const MatXd>(data_.data(), rows, cols);
  }
  Eigen::Map<VecXd> vec() {
    require_rank(1);
    return Eigen::Map<VecXd>(data_.data(), data_.size());
  }
  Eigen::Map<const VecXd> vec() const {
    require_rank(1);
    return Eigen::Map<const VecXd>(data_.data(), data_.size());
  }
  // Flat view regardless of rank.
  Eigen::Map<VecXd> flat() { return Eigen::Map<VecXd>(data_.data(), data_.size()); }
  Eigen::Map<const VecXd> flat() const { return Eigen::Map<const VecXd>(data_.data(), data_.size()); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw DimensionError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape) +
                           " changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return data_.isFinite().all(); }

 private:
  static Index checked_numel(const Shape& s);
  void require_rank(Index r) const {
    if (rank() != r)
      throw DimensionError("expected rank " + std::to_string(r) + " tensor, got shape " +
                           shape_to_string(shape_));
  }

  Shape shape_;
  ArrXd data_;
};

// Axis decomposition for generic N-d reductions: flat index of element
// (outer o, axis i, inner r) is (o * extent + i) * inner + r.
struct AxisView {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};
AxisView axis_view(const Shape& shape, Index axis);

}  // namespace emtm
