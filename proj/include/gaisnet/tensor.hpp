#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gaisnet {

template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mat = Tensor<double>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

// Multiply-add counter for the matmul kernels. Thread-local so concurrent
// experiments do not interfere; reset/read via MacScope.
namespace detail {
inline thread_local std::uint64_t mac_counter = 0;
}

class MacScope {
 public:
  MacScope() : start_(detail::mac_counter) {}
  std::uint64_t count() const { return detail::mac_counter - start_; }

 private:
  std::uint64_t start_;
};

/// a * b. Throws ShapeError on inner-dimension mismatch.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  detail::mac_counter += static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols());
  Tensor<Scalar> out = a * b;
  return out;
}

/// a * b^T.
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()) + "^T");
  detail::mac_counter += static_cast<std::uint64_t>(a.rows() * a.cols() * b.rows());
  Tensor<Scalar> out = a * b.transpose();
  return out;
}

/// a^T * b.
template <typename Scalar>
Tensor<Scalar> matmul_tn(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: " + shape_str(a.rows(), a.cols()) + "^T x " +
                     shape_str(b.rows(), b.cols()));
  detail::mac_counter += static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols());
  Tensor<Scalar> out = a.transpose() * b;
  return out;
}

/// x + broadcast row vector.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& x, const Tensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw ShapeError("add_row: bias " + shape_str(row.rows(), row.cols()) +
                     " does not broadcast over " + shape_str(x.rows(), x.cols()));
  Tensor<Scalar> out = x;
  out.rowwise() += row.row(0);
  return out;
}

template <typename Scalar>
Tensor<Scalar> col_sum(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = x.colwise().sum();
  return out;
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Tensor<Scalar> row_softmax(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mx = x.row(r).maxCoeff();
    Scalar sum = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp(x(r, c) - mx);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

/// Backward of row_softmax given its output y and upstream dy.
template <typename Scalar>
Tensor<Scalar> row_softmax_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const Scalar dot = y.row(r).dot(dy.row(r));
    for (Eigen::Index c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (dy(r, c) - dot);
  }
  return dx;
}

template <typename Scalar>
struct LayerNormCache {
  Tensor<Scalar> normalized;  // (x - mean) * inv_std
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

/// Per-row layer norm with population variance. gamma, beta are 1 x n.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Scalar eps,
                          LayerNormCache<Scalar>* cache = nullptr) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw ShapeError("layer_norm: affine params must be 1x" + std::to_string(x.cols()));
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Eigen::Index n = x.cols();
  Tensor<Scalar> xhat(x.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / static_cast<Scalar>(n);
    Scalar var = 0;
    for (Eigen::Index c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<Scalar>(n);
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    for (Eigen::Index c = 0; c < n; ++c) xhat(r, c) = (x(r, c) - mean) * inv_std(r);
  }
  Tensor<Scalar> out = xhat.array().rowwise() * gamma.row(0).array();
  out.rowwise() += beta.row(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// Returns dx; accumulates into dgamma/dbeta when non-null.
template <typename Scalar>
Tensor<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& cache,
                                   const Tensor<Scalar>& gamma, const Tensor<Scalar>& dy,
                                   Tensor<Scalar>* dgamma, Tensor<Scalar>* dbeta) {
  const Tensor<Scalar>& xhat = cache.normalized;
  const Eigen::Index n = xhat.cols();
  if (dgamma) *dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (dbeta) *dbeta += dy.colwise().sum();
  Tensor<Scalar> dxhat = dy.array().rowwise() * gamma.row(0).array();
  Tensor<Scalar> dx(xhat.rows(), n);
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).sum() / static_cast<Scalar>(n);
    const Scalar mean_dx = dxhat.row(r).dot(xhat.row(r)) / static_cast<Scalar>(n);
    for (Eigen::Index c = 0; c < n; ++c)
      dx(r, c) = cache.inv_std(r) * (dxhat(r, c) - mean_d - xhat(r, c) * mean_dx);
  }
  return dx;
}

/// Exact (erf) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  return x.unaryExpr([](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v / std::sqrt(Scalar(2))));
  });
}

template <typename Scalar>
Tensor<Scalar> gelu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * Scalar(M_PI));
  Tensor<Scalar> d = x.unaryExpr([&](Scalar v) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v / std::sqrt(Scalar(2))));
    return cdf + v * inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
  });
  Tensor<Scalar> out = d.cwiseProduct(dy);
  return out;
}

template <typename Scalar>
struct AttentionCache {
  Tensor<Scalar> q, k, v;
  Tensor<Scalar> weights;  // row_softmax(q k^T / sqrt(d_h))
};

/// Single-head scaled dot-product attention: row_softmax(q k^T / sqrt(d_h)) v.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k,
                         const Tensor<Scalar>& v, AttentionCache<Scalar>* cache = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows())
    throw ShapeError("attention: q " + shape_str(q.rows(), q.cols()) + ", k " +
                     shape_str(k.rows(), k.cols()) + ", v " + shape_str(v.rows(), v.cols()));
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  Tensor<Scalar> scores = matmul_nt(q, k) * scale;
  Tensor<Scalar> w = row_softmax(scores);
  Tensor<Scalar> out = matmul(w, v);
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->weights = std::move(w);
  }
  return out;
}

template <typename Scalar>
struct AttentionGrads {
  Tensor<Scalar> dq, dk, dv;
};

template <typename Scalar>
AttentionGrads<Scalar> attention_backward(const AttentionCache<Scalar>& cache,
                                          const Tensor<Scalar>& dout) {
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(cache.q.cols()));
  AttentionGrads<Scalar> g;
  g.dv = matmul_tn(cache.weights, dout);
  Tensor<Scalar> dw = matmul_nt(dout, cache.v);
  Tensor<Scalar> dscores = row_softmax_backward(cache.weights, dw) * scale;
  g.dq = matmul(dscores, cache.k);
  g.dk = matmul_tn(dscores, cache.q);
  return g;
}

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& x) {
  return x.allFinite();
}

}  // namespace gaisnet
