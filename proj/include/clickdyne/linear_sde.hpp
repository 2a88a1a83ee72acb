#pragma once

// Exact discretization of complex linear SDEs dx = A x dt + dW with circular
// Gaussian increments <dW dW^dag> = D dt and <dW dW^T> = 0:
//
//   x_{k+1} = F x_k + xi_k,   F = exp(A dt),   <xi xi^dag> = Q = int_0^dt e^{As} D e^{A^dag s} ds.
//
// Q comes from the Van Loan block exponential; the stationary covariance
// solves A S + S A^dag + D = 0.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <complex>
#include <string>

#include "clickdyne/error.hpp"

namespace clickdyne {

using MatC = Eigen::MatrixXcd;
using VecC = Eigen::VectorXcd;

inline double max_real_eigenvalue(const MatC& a) {
  Eigen::ComplexEigenSolver<MatC> es(a, false);
  return es.eigenvalues().real().maxCoeff();
}

inline void require_stable(const MatC& a) {
  const double re = max_real_eigenvalue(a);
  if (!(re < 0.0)) {
    throw Error(ErrorKind::StabilityViolation,
                "drift matrix has an eigenvalue with real part " + std::to_string(re) + " >= 0");
  }
}

/// S with A S + S A^dag + D = 0, via the Kronecker form
/// (I (x) A + conj(A) (x) I) vec(S) = -vec(D).
inline MatC stationary_covariance(const MatC& a, const MatC& d) {
  require_stable(a);
  const Eigen::Index n = a.rows();
  const MatC id = MatC::Identity(n, n);
  MatC k = MatC::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      k.block(i * n, j * n, n, n) += id(i, j) * a;
      k.block(i * n, j * n, n, n) += std::conj(a(i, j)) * id;
    }
  }
  const VecC vec_d = Eigen::Map<const VecC>(d.data(), n * n);
  const VecC vec_s = k.partialPivLu().solve(-vec_d);
  MatC s = Eigen::Map<const MatC>(vec_s.data(), n, n);
  return 0.5 * (s + s.adjoint());
}

/// L with L L^dag = Q for Hermitian positive semidefinite Q. Negative
/// eigenvalues from round-off are clipped to zero.
inline MatC hermitian_factor(const MatC& q) {
  const MatC h = 0.5 * (q + q.adjoint());
  Eigen::SelfAdjointEigenSolver<MatC> es(h);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

struct ExactStep {
  MatC transition;   // F
  MatC covariance;   // Q
  MatC noise_factor; // L, L L^dag = Q
};

inline ExactStep discretize(const MatC& a, const MatC& d, double dt) {
  require_stable(a);
  const Eigen::Index n = a.rows();
  MatC m = MatC::Zero(2 * n, 2 * n);
  m.topLeftCorner(n, n) = a * dt;
  m.topRightCorner(n, n) = d * dt;
  m.bottomRightCorner(n, n) = -a.adjoint() * dt;
  const MatC e = m.exp();
  ExactStep out;
  out.transition = e.topLeftCorner(n, n);
  const MatC q = e.topRightCorner(n, n) * out.transition.adjoint();
  out.covariance = 0.5 * (q + q.adjoint());
  out.noise_factor = hermitian_factor(out.covariance);
  return out;
}

}  // namespace clickdyne
