#pragma once

#include <cstdint>

#include "kalnat/linalg.hpp"

namespace kalnat::belief {

enum class CovBackend { Full, Diagonal };

// Additive prediction-step covariance inflation Q = q*I.
struct ProcessNoise {
  double q = 1e-4;
};

// Gaussian posterior over the trainable parameters: N(mean, cov). The
// covariance lives either as a full n-by-n matrix or as a length-n vector of
// variances, selected by `backend`. Values are immutable by convention: the
// operations in kalman.hpp take a belief and return the successor.
struct GaussianBelief {
  Vector mean;
  Matrix cov;       // Full backend; empty otherwise
  Vector cov_diag;  // Diagonal backend; empty otherwise
  CovBackend backend = CovBackend::Full;
  std::uint64_t step = 0;

  std::size_t dim() const noexcept { return mean.size(); }

  // Cheap structural checks: shapes, symmetry, positive variances, finiteness.
  // Full positive-definiteness is the caller's concern (CholeskyFactor).
  void validate() const;
};

// Zero mean, isotropic covariance sigma0 (matrix or per-entry), step 0.
GaussianBelief init_belief(std::size_t n, double sigma0, CovBackend backend);

// Posterior covariance through the precision form:
//   (prior_cov^{-1} + H^T R^{-1} H)^{-1}, symmetrized.
// The covariance-form counterpart is kalman::update; keeping the two routes
// independent is what makes their agreement a meaningful check.
Matrix woodbury_posterior_cov(const Matrix& prior_cov, const Matrix& h,
                              const Matrix& r);

// Lower clamp applied to covariance diagonals after every update.
inline constexpr double kCovDiagFloor = 1e-12;

}  // namespace kalnat::belief
