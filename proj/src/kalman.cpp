#include "kalnat/kalman.hpp"

#include <algorithm>
#include <cmath>

#include "kalnat/kernels.hpp"

namespace kalnat::kalman {

using belief::CovBackend;
using belief::GaussianBelief;

namespace {

// Pieces shared between the gain, the covariance update, and the Method-2
// noise estimate. sht is Sigma H^T (n x m); hsht is H Sigma H^T (m x m);
// ht is H^T, kept only for the diagonal backend's posterior contraction.
struct InnovationParts {
  Matrix sht;
  Matrix hsht;
  Matrix ht;
};

InnovationParts innovation_parts(const GaussianBelief& prior, const Matrix& h) {
  if (h.cols() != prior.dim())
    throw InvalidArgument("kalman: H column count does not match belief size");
  InnovationParts parts;
  if (prior.backend == CovBackend::Full) {
    parts.sht = matmul_nt(prior.cov, h);
    parts.hsht = matmul(h, parts.sht);
  } else {
    const std::size_t m = h.rows();
    const Vector& s = prior.cov_diag;
    parts.ht = transpose(h);
    parts.sht = parts.ht;
    for (std::size_t i = 0; i < parts.sht.rows(); ++i)
      kernels::scale(s[i], parts.sht.row(i), m);
    parts.hsht = Matrix(m, m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a; b < m; ++b) {
        const double v =
            kernels::weighted_dot(h.row(a), s.data(), h.row(b), h.cols());
        parts.hsht(a, b) = v;
        parts.hsht(b, a) = v;
      }
  }
  symmetrize(parts.hsht);
  return parts;
}

// K from the precomputed parts; kt is K^T (m x n) to keep the solves row-major.
Matrix gain_from_parts(const InnovationParts& parts, const Matrix& r) {
  Matrix innovation = parts.hsht + r;
  symmetrize(innovation);
  const Matrix kt = CholeskyFactor(innovation).solve(transpose(parts.sht));
  return transpose(kt);
}

GaussianBelief update_from_parts(const GaussianBelief& prior,
                                 const InnovationParts& parts, const Matrix& k,
                                 const Vector& residual, double lam,
                                 robust::LambdaScope scope) {
  GaussianBelief post = prior;
  const Vector kr = matvec(k, residual);
  kernels::axpy(lam, kr.data(), post.mean.data(), post.mean.size());

  const double factor =
      scope == robust::LambdaScope::TextIVD ? lam : 1.0;
  if (prior.backend == CovBackend::Full) {
    const Matrix hs = transpose(parts.sht);  // H Sigma, m x n
    const std::size_t n = post.dim();
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = post.cov.row(i);
      for (std::size_t l = 0; l < hs.rows(); ++l)
        kernels::axpy(-factor * k(i, l), hs.row(l), dst, n);
    }
    symmetrize(post.cov);
    for (std::size_t i = 0; i < n; ++i)
      post.cov(i, i) = std::max(post.cov(i, i), belief::kCovDiagFloor);
  } else {
    const std::size_t m = residual.size();
    for (std::size_t i = 0; i < post.dim(); ++i) {
      const double t = kernels::dot(k.row(i), parts.ht.row(i), m);
      post.cov_diag[i] = std::max(post.cov_diag[i] * (1.0 - factor * t),
                                  belief::kCovDiagFloor);
    }
  }
  post.step = prior.step + 1;
  return post;
}

void check_lambda(double lam) {
  if (!(lam > 0.0 && lam <= 1.0))
    throw InvalidArgument("kalman: lambda must lie in (0,1]");
}

StepResult step_impl(const KalmanOptimizer& opt,
                     const obs::TwoTowerModel& model,
                     const obs::Minibatch& batch) {
  const std::size_t m = batch.size();
  if (opt.noise.obs_dim() != m)
    throw InvalidArgument("kalman: batch size does not match noise dimension");
  if (model.param_count() != opt.belief.dim())
    throw InvalidArgument("kalman: model parameter count does not match belief");

  const GaussianBelief prior = predict(opt.belief, opt.process);

  const Matrix s = obs::similarity(model, batch, prior.mean);
  Vector yhat(m);
  for (std::size_t i = 0; i < m; ++i) yhat[i] = s(i, i);
  const Vector r = robust::residual(obs::target_output(m), yhat);
  const Matrix h = obs::jacobian(model, batch, prior.mean);

  const double d_m = robust::mahalanobis(r, opt.noise.r);
  const double lam = robust::regulation(d_m, opt.robust.alpha);

  const InnovationParts parts = innovation_parts(prior, h);
  const Matrix rhat = opt.noise.method == robust::RhatMethod::FirstOrder
                          ? robust::rhat_method2_from_parts(r, parts.hsht)
                          : robust::rhat_method1(r);
  robust::NoiseState noise = robust::ema_update(opt.noise, rhat, lam);

  const Matrix k = gain_from_parts(parts, noise.r);
  GaussianBelief post =
      update_from_parts(prior, parts, k, r, lam, opt.robust.lambda_scope);

  StepReport report;
  report.residual_norm = norm2(r);
  report.d_m = d_m;
  report.lambda = lam;
  report.loss = obs::clip_loss(s, model.temperature);
  report.r_trace = trace(noise.r);
  report.step_norm = norm2(post.mean - prior.mean);
  report.ood_fraction = batch.ood_fraction();

  return StepResult{
      KalmanOptimizer{std::move(post), std::move(noise), opt.process,
                      opt.robust},
      report};
}

}  // namespace

bool StepReport::finite() const {
  return std::isfinite(residual_norm) && std::isfinite(d_m) &&
         std::isfinite(lambda) && std::isfinite(loss) &&
         std::isfinite(r_trace) && std::isfinite(step_norm) &&
         std::isfinite(ood_fraction);
}

GaussianBelief predict(const GaussianBelief& b,
                       const belief::ProcessNoise& process) {
  if (!(process.q >= 0.0)) throw InvalidArgument("predict: q must be >= 0");
  GaussianBelief out = b;
  if (b.backend == CovBackend::Full) {
    for (std::size_t i = 0; i < out.dim(); ++i) out.cov(i, i) += process.q;
  } else {
    for (double& v : out.cov_diag) v += process.q;
  }
  return out;
}

Matrix gain(const GaussianBelief& prior, const Matrix& h, const Matrix& r) {
  if (r.rows() != h.rows() || r.rows() != r.cols())
    throw InvalidArgument("gain: R shape does not match H");
  return gain_from_parts(innovation_parts(prior, h), r);
}

GaussianBelief update(const GaussianBelief& prior, const Matrix& h,
                      const Vector& residual, const Matrix& r, double lam,
                      robust::LambdaScope scope) {
  check_lambda(lam);
  if (residual.size() != h.rows())
    throw InvalidArgument("update: residual length does not match H");
  if (r.rows() != h.rows() || r.rows() != r.cols())
    throw InvalidArgument("update: R shape does not match H");
  const InnovationParts parts = innovation_parts(prior, h);
  const Matrix k = gain_from_parts(parts, r);
  return update_from_parts(prior, parts, k, residual, lam, scope);
}

StepResult step(const KalmanOptimizer& opt, const obs::TwoTowerModel& model,
                const obs::Minibatch& batch) {
  return step_impl(opt, model, batch);
}

StepResult diag_step(const KalmanOptimizer& opt,
                     const obs::TwoTowerModel& model,
                     const obs::Minibatch& batch) {
  if (opt.belief.backend != CovBackend::Diagonal)
    throw InvalidArgument("diag_step: belief backend is not Diagonal");
  return step_impl(opt, model, batch);
}

}  // namespace kalnat::kalman
