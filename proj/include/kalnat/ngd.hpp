#pragma once

#include <cstdint>
#include <random>

#include "kalnat/belief.hpp"

namespace kalnat::ngd {

enum class FisherKind { GaussNewton, Empirical };

struct FisherEstimate {
  Matrix matrix;  // n x n, symmetric PSD
  FisherKind kind = FisherKind::GaussNewton;
  std::uint64_t sample_count = 0;
};

// Gradient of the Gaussian-quadratic loss L = 1/2 (yhat-y)^T R^{-1} (yhat-y):
// H^T R^{-1} (yhat - y), i.e. H^T R^{-1} (-residual) with residual = y - yhat.
Vector loss_gradient(const Matrix& h, const Matrix& r, const Vector& residual);

// Gauss-Newton curvature H^T R^{-1} H, symmetrized.
FisherEstimate gauss_newton_fisher(const Matrix& h, const Matrix& r);

// Monte-Carlo Fisher E[grad grad^T] with residual samples ~ N(0, R). Sampling
// is chunked with per-chunk substreams (fixed chunk size), so the result is
// independent of any evaluation order.
FisherEstimate empirical_fisher(const Matrix& h, const Matrix& r,
                                std::uint64_t sample_count,
                                std::uint64_t seed);

// mu - post_cov * grad.
Vector natural_gradient_step(const Vector& mu, const Matrix& post_cov,
                             const Vector& grad);

// Deviations between the covariance-form update and the precision-form
// reformulation, plus the magnitudes that make the approximation gap to pure
// natural gradient observable.
struct Lemma1Report {
  double mean_dev = 0.0;           // relative, against the Eq-form mean
  double cov_dev = 0.0;            // relative Frobenius
  double prior_precision_norm = 0.0;  // ||Sigma_prior^{-1}||_F
  double fisher_norm = 0.0;           // ||H^T R^{-1} H||_F

  bool within(double tol) const { return mean_dev <= tol && cov_dev <= tol; }
};

// Runs both update routes on one instance and reports their disagreement.
// Ill-conditioned but factorizable inputs produce a report with large
// deviations rather than an error.
Lemma1Report verify_lemma1(const belief::GaussianBelief& prior, const Matrix& h,
                           const Matrix& r, const Vector& residual);

// Random well-conditioned SPD matrix with spectrum in [1, cond].
Matrix random_spd(std::size_t n, double cond, std::mt19937_64& rng);

struct RandomInstance {
  belief::GaussianBelief prior;
  Matrix h;
  Matrix r;
  Vector residual;
};

RandomInstance random_instance(std::size_t n, std::size_t m, double cond,
                               std::mt19937_64& rng);

// Aggregate results of the identity checks over a set of random instances;
// what the `verify` CLI subcommand prints.
struct VerifySummary {
  std::size_t trials = 0;
  double max_mean_dev = 0.0;
  double max_cov_dev = 0.0;
  double max_fisher_dev = 0.0;     // precision increment vs Gauss-Newton
  double max_mc_rel_err_1e5 = 0.0; // empirical vs Gauss-Newton Fisher
  double elapsed_s = 0.0;
};

VerifySummary run_verification(std::size_t trials, std::uint64_t seed,
                               std::uint64_t fisher_samples,
                               std::size_t fisher_instances);

}  // namespace kalnat::ngd
