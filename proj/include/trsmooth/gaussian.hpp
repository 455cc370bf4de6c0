#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace trsmooth {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Thrown when a covariance cannot be Cholesky-factorized even after repair.
struct FactorizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Gaussian over an n-dimensional state: mean plus symmetric PSD covariance.
template <typename Scalar = double>
struct GaussianBelief {
  VectorX<Scalar> mean;
  MatrixX<Scalar> cov;

  Eigen::Index dim() const { return mean.size(); }
};

using GaussianBeliefd = GaussianBelief<double>;

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return ((m + m.transpose()) * typename Derived::Scalar(0.5)).eval();
}

/// Scale-aware eigenvalue floor used by all PD repairs: 1e-10 * max(1, tr/n).
template <typename Scalar>
Scalar default_eig_floor(const MatrixX<Scalar>& m) {
  const Scalar scale = m.rows() > 0 ? m.trace() / Scalar(m.rows()) : Scalar(0);
  return Scalar(1e-10) * std::max(Scalar(1), scale);
}

namespace detail {

/// Eigenvalue-clip projection of the symmetric part; reports whether anything moved.
template <typename Scalar>
std::pair<MatrixX<Scalar>, bool> nearest_pd_ex(const MatrixX<Scalar>& m, Scalar floor) {
  const MatrixX<Scalar> sym = symmetrized(m);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw FactorizationError("nearest_pd: eigendecomposition failed");
  }
  VectorX<Scalar> vals = eig.eigenvalues();
  bool clipped = !m.isApprox(sym, Scalar(1e-14));
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] < floor) {
      vals[i] = floor;
      clipped = true;
    }
  }
  if (!clipped) {
    return {sym, false};
  }
  MatrixX<Scalar> out =
      eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  return {symmetrized(out), true};
}

}  // namespace detail

/// Nearest (Frobenius) positive definite matrix with eigenvalues >= floor.
template <typename Scalar>
MatrixX<Scalar> nearest_pd(const MatrixX<Scalar>& m, Scalar floor) {
  return detail::nearest_pd_ex(m, floor).first;
}

namespace detail {

/// LLT with one nearest_pd retry. Bumps `repairs` when the input needed fixing.
template <typename Scalar>
Eigen::LLT<MatrixX<Scalar>> cholesky_repaired(const MatrixX<Scalar>& m, int* repairs = nullptr) {
  Eigen::LLT<MatrixX<Scalar>> llt(m);
  if (llt.info() == Eigen::Success) {
    return llt;
  }
  const MatrixX<Scalar> fixed = nearest_pd(m, default_eig_floor(m));
  if (repairs != nullptr) {
    ++*repairs;
  }
  llt.compute(fixed);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("cholesky_repaired: matrix not PD after repair");
  }
  return llt;
}

template <typename Scalar>
Scalar log_det_from_llt(const Eigen::LLT<MatrixX<Scalar>>& llt) {
  return Scalar(2) * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// KL(g0 || g1) between Gaussians, evaluated through Cholesky factors of the
/// covariances. Negative round-off is clamped at zero.
template <typename Scalar>
Scalar gaussian_kl(const GaussianBelief<Scalar>& g0, const GaussianBelief<Scalar>& g1) {
  const Eigen::Index n = g0.dim();
  if (g1.dim() != n || g0.cov.rows() != n || g1.cov.rows() != n) {
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  }
  const auto llt1 = detail::cholesky_repaired<Scalar>(g1.cov);
  const auto llt0 = detail::cholesky_repaired<Scalar>(g0.cov);
  const Scalar trace_term = llt1.solve(g0.cov).trace();
  const VectorX<Scalar> d = g1.mean - g0.mean;
  const Scalar quad = d.dot(llt1.solve(d));
  const Scalar log_det_ratio =
      detail::log_det_from_llt(llt1) - detail::log_det_from_llt(llt0);
  const Scalar kl = Scalar(0.5) * (trace_term - Scalar(n) + quad + log_det_ratio);
  return std::max(kl, Scalar(0));
}

}  // namespace trsmooth
