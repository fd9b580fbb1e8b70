#pragma once

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "stcal/errors.hpp"
#include "stcal/random.hpp"

namespace stcal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline void symmetrize(Matrix& a) { a = 0.5 * (a + a.transpose()).eval(); }

/**
 * @brief Cholesky factor of a symmetric positive-definite matrix.
 *
 * On failure the factorization is retried once with `jitter` (relative to the
 * mean diagonal) added to the diagonal; a second failure throws.
 */
inline Eigen::LLT<Matrix> factor_spd(const Matrix& a, double jitter = 1e-10, const char* what = "matrix") {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = a.rows() > 0 ? std::max(1.0, a.diagonal().cwiseAbs().mean()) : 1.0;
  Matrix b = a;
  b.diagonal().array() += jitter * scale;
  llt.compute(b);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string("factorization failed: ") + what + " is not positive definite");
  }
  return llt;
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Lower-triangular square root of a symmetric PSD matrix; zero directions allowed.
inline Matrix psd_sqrt(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

/// Draw from N(mean, cov); cov may be singular.
inline Vector sample_mvn(const Vector& mean, const Matrix& cov, Random& rng) {
  const Matrix root = psd_sqrt(cov);
  Vector z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + root * z;
}

}  // namespace stcal
