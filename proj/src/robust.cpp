#include "kalnat/robust.hpp"

#include <cmath>
#include <limits>

#include "kalnat/kernels.hpp"

namespace kalnat::robust {

namespace {

// Clamp the spectrum of a symmetric matrix below at `floor_value`. The matrix
// is reconstructed only when a clamp actually fires, so the common path leaves
// the EMA result untouched.
void floor_spectrum(Matrix& m, double floor_value) {
  Vector evals;
  Matrix evecs;
  sym_eig(m, evals, evecs);
  bool clipped = false;
  for (double& w : evals) {
    if (w < floor_value) {
      w = floor_value;
      clipped = true;
    }
  }
  if (!clipped) return;
  const std::size_t n = m.rows();
  Matrix scaled = evecs;  // columns scaled by eigenvalues
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= evals[j];
  m = matmul_nt(scaled, evecs);
  symmetrize(m);
}

}  // namespace

NoiseState NoiseState::init(std::size_t m, double beta, double epsilon,
                            RhatMethod method) {
  if (m < 1) throw InvalidArgument("NoiseState: m must be >= 1");
  if (!(beta > 0.0 && beta < 1.0))
    throw InvalidArgument("NoiseState: beta must lie in (0,1)");
  if (!(epsilon > 0.0)) throw InvalidArgument("NoiseState: epsilon must be > 0");
  NoiseState s;
  s.r = Matrix(m, m);
  for (std::size_t i = 0; i < m; ++i) s.r(i, i) = epsilon;
  s.beta = beta;
  s.epsilon = epsilon;
  s.method = method;
  return s;
}

Vector residual(const Vector& y, const Vector& yhat) {
  if (y.size() != yhat.size())
    throw InvalidArgument("residual: length mismatch");
  return y - yhat;
}

Matrix rhat_method1(const Vector& r) { return outer(r, r); }

Matrix rhat_method2(const Vector& r, const Matrix& h, const Matrix& prior_cov) {
  if (h.rows() != r.size() || h.cols() != prior_cov.rows() ||
      prior_cov.rows() != prior_cov.cols())
    throw InvalidArgument("rhat_method2: inconsistent dimensions");
  const Matrix sht = matmul_nt(prior_cov, h);  // n x m
  return rhat_method2_from_parts(r, matmul(h, sht));
}

Matrix rhat_method2_diag(const Vector& r, const Matrix& h,
                         const Vector& prior_diag) {
  if (h.rows() != r.size() || h.cols() != prior_diag.size())
    throw InvalidArgument("rhat_method2_diag: inconsistent dimensions");
  const std::size_t m = r.size();
  Matrix hsht(m, m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a; b < m; ++b) {
      const double v = kernels::weighted_dot(h.row(a), prior_diag.data(),
                                             h.row(b), h.cols());
      hsht(a, b) = v;
      hsht(b, a) = v;
    }
  return rhat_method2_from_parts(r, hsht);
}

Matrix rhat_method2_from_parts(const Vector& r, const Matrix& h_sigma_ht) {
  if (h_sigma_ht.rows() != r.size() || h_sigma_ht.cols() != r.size())
    throw InvalidArgument("rhat_method2: curvature term has wrong shape");
  Matrix rhat = outer(r, r) + h_sigma_ht;
  symmetrize(rhat);
  return rhat;
}

double mahalanobis(const Vector& r, const Matrix& r_prev) {
  if (r_prev.rows() != r.size())
    throw InvalidArgument("mahalanobis: dimension mismatch");
  const Vector x = spd_solve(r_prev, r);
  const double q = dot(r, x);
  return std::sqrt(std::max(q, 0.0));
}

double regulation(double d_m, double alpha) {
  if (!(d_m >= 0.0)) throw InvalidArgument("regulation: d_m must be >= 0");
  if (!(alpha >= 0.0)) throw InvalidArgument("regulation: alpha must be >= 0");
  return std::max(std::exp(-alpha * d_m), std::numeric_limits<double>::min());
}

NoiseState ema_update(NoiseState state, const Matrix& rhat, double lam) {
  if (!(lam > 0.0 && lam <= 1.0))
    throw InvalidArgument("ema_update: lambda must lie in (0,1]");
  if (rhat.rows() != state.r.rows() || rhat.cols() != state.r.cols())
    throw InvalidArgument("ema_update: rhat shape mismatch");
  kernels::scale(state.beta, state.r.data(), state.r.size());
  kernels::axpy(lam * (1.0 - state.beta), rhat.data(), state.r.data(),
                state.r.size());
  symmetrize(state.r);
  floor_spectrum(state.r, state.epsilon);
  return state;
}

}  // namespace kalnat::robust
