#include "kalnat/belief.hpp"

#include <cmath>
#include <string>

namespace kalnat::belief {

void GaussianBelief::validate() const {
  const std::size_t n = mean.size();
  if (!all_finite(mean)) throw InvalidArgument("belief: non-finite mean");
  if (backend == CovBackend::Full) {
    if (cov.rows() != n || cov.cols() != n)
      throw InvalidArgument("belief: covariance shape does not match mean");
    if (!cov_diag.empty())
      throw InvalidArgument("belief: Full backend carries a diagonal store");
    if (!all_finite(cov)) throw InvalidArgument("belief: non-finite covariance");
    if (!is_symmetric(cov, 1e-10))
      throw InvalidArgument("belief: covariance not symmetric within 1e-10");
    for (std::size_t i = 0; i < n; ++i)
      if (!(cov(i, i) > 0.0))
        throw InvalidArgument("belief: non-positive variance at index " +
                              std::to_string(i));
  } else {
    if (cov_diag.size() != n)
      throw InvalidArgument("belief: diagonal covariance length mismatch");
    if (!cov.empty())
      throw InvalidArgument("belief: Diagonal backend carries a full store");
    for (std::size_t i = 0; i < n; ++i)
      if (!(cov_diag[i] > 0.0) || !std::isfinite(cov_diag[i]))
        throw InvalidArgument("belief: non-positive variance at index " +
                              std::to_string(i));
  }
}

GaussianBelief init_belief(std::size_t n, double sigma0, CovBackend backend) {
  if (n < 1) throw InvalidArgument("init_belief: n must be >= 1");
  if (!(sigma0 > 0.0)) throw InvalidArgument("init_belief: sigma0 must be > 0");
  GaussianBelief b;
  b.mean.assign(n, 0.0);
  b.backend = backend;
  if (backend == CovBackend::Full) {
    b.cov = Matrix::identity(n);
    for (std::size_t i = 0; i < n; ++i) b.cov(i, i) = sigma0;
  } else {
    b.cov_diag.assign(n, sigma0);
  }
  b.step = 0;
  return b;
}

Matrix woodbury_posterior_cov(const Matrix& prior_cov, const Matrix& h,
                              const Matrix& r) {
  if (h.cols() != prior_cov.rows() || h.rows() != r.rows() ||
      r.rows() != r.cols()) {
    throw InvalidArgument("woodbury_posterior_cov: inconsistent dimensions");
  }
  Matrix precision = spd_inverse(prior_cov);
  const Matrix rinv_h = spd_solve(r, h);        // R^{-1} H, m x n
  precision = precision + matmul_tn(h, rinv_h);  // + H^T R^{-1} H
  symmetrize(precision);
  Matrix post = spd_inverse(precision);
  symmetrize(post);
  return post;
}

}  // namespace kalnat::belief
