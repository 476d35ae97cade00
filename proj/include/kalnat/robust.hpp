#pragma once

#include "kalnat/linalg.hpp"

namespace kalnat::robust {

enum class RhatMethod { ZerothOrder, FirstOrder };
enum class LambdaScope { Alg1, TextIVD };

// Observation-noise covariance R (m x m, symmetric PD) with its EMA
// parameters. Evolves under a single owner per optimizer step; all operations
// here except ema_update are pure.
struct NoiseState {
  Matrix r;
  double beta = 0.98;
  double epsilon = 1e-3;
  RhatMethod method = RhatMethod::FirstOrder;

  static NoiseState init(std::size_t m, double beta, double epsilon,
                         RhatMethod method);  // R0 = epsilon * I
  std::size_t obs_dim() const noexcept { return r.rows(); }
};

struct RobustConfig {
  double alpha = 0.1;
  LambdaScope lambda_scope = LambdaScope::Alg1;
};

// y - yhat
Vector residual(const Vector& y, const Vector& yhat);

// Zeroth-order estimate: r r^T (rank <= 1, PSD).
Matrix rhat_method1(const Vector& r);

// First-order estimate: r r^T + H prior_cov H^T.
Matrix rhat_method2(const Vector& r, const Matrix& h, const Matrix& prior_cov);
Matrix rhat_method2_diag(const Vector& r, const Matrix& h,
                         const Vector& prior_diag);
// Variant taking H prior_cov H^T precomputed, so the optimizer step shares it
// with the gain computation.
Matrix rhat_method2_from_parts(const Vector& r, const Matrix& h_sigma_ht);

// sqrt(r^T R_prev^{-1} r), the deviation of the minibatch under the metric of
// the accumulated residual statistics.
double mahalanobis(const Vector& r, const Matrix& r_prev);

// exp(-alpha * d_m) in (0, 1]; clamped below at DBL_MIN so extreme distances
// cannot underflow to an out-of-range 0.
double regulation(double d_m, double alpha);

// R <- beta * R + lam * (1 - beta) * rhat, symmetrized, then eigenvalue-floored
// at epsilon (R - epsilon*I stays PSD). beta/epsilon/method carry over.
NoiseState ema_update(NoiseState state, const Matrix& rhat, double lam);

}  // namespace kalnat::robust
