#pragma once

#include "gaisnet/tensor.hpp"

namespace gaisnet {

/// A trainable tensor with its gradient accumulator.
template <typename Scalar>
struct Param {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool frozen = false;

  Param() = default;
  explicit Param(Tensor<Scalar> v, bool is_frozen = false)
      : value(std::move(v)), grad(Tensor<Scalar>::Zero(value.rows(), value.cols())),
        frozen(is_frozen) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

  /// Adds g to the accumulator unless frozen.
  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!frozen) grad += g;
  }

  void sgd(Scalar lr) {
    if (!frozen) value -= lr * grad;
  }
};

using ParamD = Param<double>;

}  // namespace gaisnet
