#include "kalnat/ngd.hpp"

#include <chrono>
#include <cmath>

#include "kalnat/kalman.hpp"
#include "kalnat/kernels.hpp"

namespace kalnat::ngd {

namespace {

constexpr std::uint64_t kChunkSize = 4096;

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over (seed, index) so chunk streams are independent
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return std::mt19937_64(z ^ (z >> 31));
}

double rel_norm(double num, double den) {
  return num / std::max(den, 1e-300);
}

}  // namespace

Vector loss_gradient(const Matrix& h, const Matrix& r, const Vector& residual) {
  if (h.rows() != residual.size() || r.rows() != residual.size())
    throw InvalidArgument("loss_gradient: dimension mismatch");
  Vector neg = residual;
  kernels::scale(-1.0, neg.data(), neg.size());
  return matvec_t(h, spd_solve(r, neg));
}

FisherEstimate gauss_newton_fisher(const Matrix& h, const Matrix& r) {
  if (r.rows() != h.rows() || r.rows() != r.cols())
    throw InvalidArgument("gauss_newton_fisher: R shape does not match H");
  Matrix f = matmul_tn(h, spd_solve(r, h));
  symmetrize(f);
  return FisherEstimate{std::move(f), FisherKind::GaussNewton, 0};
}

FisherEstimate empirical_fisher(const Matrix& h, const Matrix& r,
                                std::uint64_t sample_count,
                                std::uint64_t seed) {
  if (sample_count < 1)
    throw InvalidArgument("empirical_fisher: sample_count must be >= 1");
  if (r.rows() != h.rows() || r.rows() != r.cols())
    throw InvalidArgument("empirical_fisher: R shape does not match H");
  const std::size_t m = r.rows();
  const std::size_t n = h.cols();
  const CholeskyFactor chol(r);
  const Matrix& l = chol.lower();

  Matrix acc(n, n);
  Vector z(m), sample(m);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::uint64_t chunks = (sample_count + kChunkSize - 1) / kChunkSize;
  for (std::uint64_t c = 0; c < chunks; ++c) {
    std::mt19937_64 rng = substream(seed, c);
    const std::uint64_t lo = c * kChunkSize;
    const std::uint64_t hi = std::min(lo + kChunkSize, sample_count);
    for (std::uint64_t sidx = lo; sidx < hi; ++sidx) {
      for (std::size_t i = 0; i < m; ++i) z[i] = gauss(rng);
      for (std::size_t i = 0; i < m; ++i)
        sample[i] = kernels::dot(l.row(i), z.data(), i + 1);
      // grad for residual drawn as (y - yhat) = sample
      const Vector g = loss_gradient(h, r, sample);
      for (std::size_t i = 0; i < n; ++i)
        kernels::axpy(g[i], g.data(), acc.row(i), n);
    }
  }
  kernels::scale(1.0 / static_cast<double>(sample_count), acc.data(),
                 acc.size());
  symmetrize(acc);
  return FisherEstimate{std::move(acc), FisherKind::Empirical, sample_count};
}

Vector natural_gradient_step(const Vector& mu, const Matrix& post_cov,
                             const Vector& grad) {
  if (post_cov.rows() != mu.size() || post_cov.cols() != grad.size())
    throw InvalidArgument("natural_gradient_step: dimension mismatch");
  return mu - matvec(post_cov, grad);
}

Lemma1Report verify_lemma1(const belief::GaussianBelief& prior, const Matrix& h,
                           const Matrix& r, const Vector& residual) {
  if (prior.backend != belief::CovBackend::Full)
    throw InvalidArgument("verify_lemma1: Full-backend prior required");

  // Covariance-form route (gain + subtraction)
  const belief::GaussianBelief post_a =
      kalman::update(prior, h, residual, r, 1.0, robust::LambdaScope::Alg1);

  // Precision-form route
  const Matrix cov_b = belief::woodbury_posterior_cov(prior.cov, h, r);
  const Vector grad = loss_gradient(h, r, residual);
  const Vector mean_b = natural_gradient_step(prior.mean, cov_b, grad);

  Lemma1Report rep;
  rep.mean_dev = rel_norm(norm2(post_a.mean - mean_b), norm2(post_a.mean));
  rep.cov_dev =
      rel_norm(frobenius_norm(post_a.cov - cov_b), frobenius_norm(post_a.cov));
  rep.prior_precision_norm = frobenius_norm(spd_inverse(prior.cov));
  rep.fisher_norm = frobenius_norm(gauss_newton_fisher(h, r).matrix);
  return rep;
}

Matrix random_spd(std::size_t n, double cond, std::mt19937_64& rng) {
  if (n < 1) throw InvalidArgument("random_spd: n must be >= 1");
  if (!(cond >= 1.0)) throw InvalidArgument("random_spd: cond must be >= 1");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Orthogonal factor from modified Gram-Schmidt on a Gaussian matrix.
  Matrix q(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vector col(n);
    double nrm = 0.0;
    do {
      for (std::size_t i = 0; i < n; ++i) col[i] = gauss(rng);
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += q(i, p) * col[i];
        for (std::size_t i = 0; i < n; ++i) col[i] -= proj * q(i, p);
      }
      nrm = norm2(col);
    } while (nrm < 1e-8);
    for (std::size_t i = 0; i < n; ++i) q(i, c) = col[i] / nrm;
  }

  Vector evals(n);
  for (std::size_t i = 0; i < n; ++i)
    evals[i] = std::exp(unif(rng) * std::log(cond));
  if (n >= 2) {  // pin the spread so cond is actually attained
    evals[0] = 1.0;
    evals[1] = cond;
  }

  Matrix scaled = q;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= evals[j];
  Matrix a = matmul_nt(scaled, q);
  symmetrize(a);
  return a;
}

RandomInstance random_instance(std::size_t n, std::size_t m, double cond,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  RandomInstance inst;
  inst.prior.backend = belief::CovBackend::Full;
  inst.prior.mean.resize(n);
  for (double& x : inst.prior.mean) x = gauss(rng);
  inst.prior.cov = random_spd(n, cond, rng);
  inst.h = Matrix(m, n);
  for (std::size_t i = 0; i < inst.h.size(); ++i) inst.h.data()[i] = gauss(rng);
  inst.r = random_spd(m, cond, rng);
  inst.residual.resize(m);
  for (double& x : inst.residual) x = gauss(rng);
  return inst;
}

VerifySummary run_verification(std::size_t trials, std::uint64_t seed,
                               std::uint64_t fisher_samples,
                               std::size_t fisher_instances) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_n(2, 16), pick_m(1, 4);
  std::uniform_real_distribution<double> pick_logcond(0.0, 2.0);

  VerifySummary out;
  out.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = pick_n(rng), m = pick_m(rng);
    const double cond = std::pow(10.0, pick_logcond(rng));
    const RandomInstance inst = random_instance(n, m, cond, rng);

    const Lemma1Report rep =
        verify_lemma1(inst.prior, inst.h, inst.r, inst.residual);
    out.max_mean_dev = std::max(out.max_mean_dev, rep.mean_dev);
    out.max_cov_dev = std::max(out.max_cov_dev, rep.cov_dev);

    // Posterior precision increment vs Gauss-Newton Fisher
    const belief::GaussianBelief post = kalman::update(
        inst.prior, inst.h, inst.residual, inst.r, 1.0,
        robust::LambdaScope::Alg1);
    const Matrix increment =
        spd_inverse(post.cov) - spd_inverse(inst.prior.cov);
    const Matrix gn = gauss_newton_fisher(inst.h, inst.r).matrix;
    out.max_fisher_dev =
        std::max(out.max_fisher_dev,
                 rel_norm(frobenius_norm(increment - gn), frobenius_norm(gn)));

    if (t < fisher_instances) {
      const Matrix emp =
          empirical_fisher(inst.h, inst.r, fisher_samples, seed + t).matrix;
      out.max_mc_rel_err_1e5 =
          std::max(out.max_mc_rel_err_1e5,
                   rel_norm(frobenius_norm(emp - gn), frobenius_norm(gn)));
    }
  }
  out.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

}  // namespace kalnat::ngd
