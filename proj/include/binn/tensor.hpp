#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace binn::ad {

using Index = std::int64_t;

/// Tensor storage is SIMD-aligned so Eigen's vectorized reductions peel the
/// same way for every allocation; summation order, and therefore every loss
/// and gradient bit, is then independent of heap history.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

/// Dense tensor of 64-bit floats, row-major, rank 1 or 2.
///
/// Rank-1 tensors behave as a single row when viewed as a matrix, which is
/// the only broadcast the op set supports (bias add).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(element_count()), 0.0);
  }

  Tensor(std::vector<Index> shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    validate_shape();
    if (element_count() != static_cast<Index>(data_.size()))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, double v) {
    Tensor t(std::move(shape));
    t.array().setConstant(v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  /// 2-D tensor from nested initializer lists, e.g. {{1,2},{3,4}}.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c)
        throw std::invalid_argument("Tensor::matrix: ragged rows");
      for (double v : row) t.data_[static_cast<std::size_t>(i++)] = v;
    }
    return t;
  }

  static Tensor row(std::initializer_list<double> vals) {
    return Tensor({static_cast<Index>(vals.size())}, std::vector<double>(vals));
  }

  Tensor(std::vector<Index> shape, AlignedBuffer data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (element_count() != static_cast<Index>(data_.size()))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  /// Rows when viewed as a matrix (1 for rank-1 tensors).
  Index rows() const { return rank() == 2 ? shape_[0] : 1; }
  Index cols() const { return rank() >= 1 ? shape_.back() : 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  double& operator()(Index r, Index c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double operator()(Index r, Index c) const {
    return data_[static_cast<std::size_t>(r * cols() + c)];
  }

  MatMap mat() { return MatMap(data_.data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), rows(), cols()); }
  ArrMap array() { return ArrMap(data_.data(), static_cast<Index>(data_.size())); }
  ConstArrMap array() const {
    return ConstArrMap(data_.data(), static_cast<Index>(data_.size()));
  }

  bool all_finite() const { return data_.empty() || array().isFinite().all(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  void validate_shape() {
    if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 unsupported");
    for (Index d : shape_)
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
  }

  Index element_count() const {
    Index n = 1;
    for (Index d : shape_) n *= d;
    return shape_.empty() ? 0 : n;
  }

  std::vector<Index> shape_;
  AlignedBuffer data_;
};

}  // namespace binn::ad
