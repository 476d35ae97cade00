#include "kalnat/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kalnat/kernels.hpp"

namespace kalnat {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "matrix add: shape mismatch");
  Matrix out = a;
  kernels::axpy(1.0, b.data(), out.data(), out.size());
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "matrix sub: shape mismatch");
  Matrix out = a;
  kernels::axpy(-1.0, b.data(), out.data(), out.size());
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  kernels::scale(s, out.data(), out.size());
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.row(i);
    const double* arow = a.row(i);
    for (std::size_t l = 0; l < a.cols(); ++l) {
      kernels::axpy(arow[l], b.row(l), dst, b.cols());
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      out(i, j) = kernels::dot(a.row(i), b.row(j), a.cols());
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t l = 0; l < a.rows(); ++l) {
    const double* arow = a.row(l);
    const double* brow = b.row(l);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      kernels::axpy(arow[i], brow, out.row(i), b.cols());
    }
  }
  return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
  require(a.cols() == x.size(), "matvec: dimension mismatch");
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    out[i] = kernels::dot(a.row(i), x.data(), a.cols());
  return out;
}

Vector matvec_t(const Matrix& a, const Vector& x) {
  require(a.rows() == x.size(), "matvec_t: dimension mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t l = 0; l < a.rows(); ++l)
    kernels::axpy(x[l], a.row(l), out.data(), a.cols());
  return out;
}

Matrix outer(const Vector& x, const Vector& y) {
  Matrix out(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    kernels::axpy(x[i], y.data(), out.row(i), y.size());
  return out;
}

void symmetrize(Matrix& a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
  }
}

double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

double frobenius_norm(const Matrix& a) {
  return std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.data()[i]));
  return m;
}

bool is_symmetric(const Matrix& a, double rel_tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::fabs(a(i, j) - a(j, i)) > rel_tol * scale) return false;
  return true;
}

bool all_finite(const Matrix& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i])) return false;
  return true;
}

double dot(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "dot: length mismatch");
  return kernels::dot(a.data(), b.data(), a.size());
}

double norm2(const Vector& v) {
  return std::sqrt(kernels::dot(v.data(), v.data(), v.size()));
}

bool all_finite(const Vector& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Vector operator-(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "vector sub: length mismatch");
  Vector out = a;
  kernels::axpy(-1.0, b.data(), out.data(), out.size());
  return out;
}

Vector operator+(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "vector add: length mismatch");
  Vector out = a;
  kernels::axpy(1.0, b.data(), out.data(), out.size());
  return out;
}

Vector operator*(double s, const Vector& v) {
  Vector out = v;
  kernels::scale(s, out.data(), out.size());
  return out;
}

CholeskyFactor::CholeskyFactor(const Matrix& a) {
  require(a.rows() == a.cols(), "cholesky: matrix not square");
  const std::size_t n = a.rows();
  l_ = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double s = a(i, j) - kernels::dot(l_.row(i), l_.row(j), j);
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s)) {
          throw SingularMatrix(
              i, "cholesky: non-positive pivot at index " + std::to_string(i));
        }
        l_(i, i) = std::sqrt(s);
      } else {
        l_(i, j) = s / l_(j, j);
      }
    }
  }
}

Vector CholeskyFactor::solve(const Vector& b) const {
  const std::size_t n = dim();
  require(b.size() == n, "cholesky solve: length mismatch");
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = (b[i] - kernels::dot(l_.row(i), x.data(), i)) / l_(i, i);
  }
  // L^T x = y, consuming L row-wise while sweeping upward
  for (std::size_t i = n; i-- > 0;) {
    x[i] /= l_(i, i);
    kernels::axpy(-x[i], l_.row(i), x.data(), i);
  }
  return x;
}

Matrix CholeskyFactor::solve(const Matrix& b) const {
  const std::size_t n = dim();
  require(b.rows() == n, "cholesky solve: row count mismatch");
  const std::size_t p = b.cols();
  Matrix x = b;
  for (std::size_t i = 0; i < n; ++i) {
    const double* lrow = l_.row(i);
    for (std::size_t k = 0; k < i; ++k)
      kernels::axpy(-lrow[k], x.row(k), x.row(i), p);
    kernels::scale(1.0 / l_(i, i), x.row(i), p);
  }
  for (std::size_t i = n; i-- > 0;) {
    kernels::scale(1.0 / l_(i, i), x.row(i), p);
    const double* lrow = l_.row(i);
    for (std::size_t k = 0; k < i; ++k)
      kernels::axpy(-lrow[k], x.row(i), x.row(k), p);
  }
  return x;
}

namespace {

void check_spd_input(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("spd_solve: matrix not square");
  if (!is_symmetric(a))
    throw InvalidArgument("spd_solve: matrix not symmetric within tolerance");
}

}  // namespace

Matrix spd_solve(const Matrix& a, const Matrix& b) {
  check_spd_input(a);
  require(b.rows() == a.rows(), "spd_solve: right-hand side shape mismatch");
  return CholeskyFactor(a).solve(b);
}

Vector spd_solve(const Matrix& a, const Vector& b) {
  check_spd_input(a);
  require(b.size() == a.rows(), "spd_solve: right-hand side length mismatch");
  return CholeskyFactor(a).solve(b);
}

Matrix spd_inverse(const Matrix& a) {
  Matrix inv = spd_solve(a, Matrix::identity(a.rows()));
  symmetrize(inv);
  return inv;
}

void sym_eig(const Matrix& a, Vector& eigenvalues, Matrix& eigenvectors) {
  require(a.rows() == a.cols(), "sym_eig: matrix not square");
  const std::size_t n = a.rows();
  Matrix m = a;
  eigenvectors = Matrix::identity(n);
  const double stop = 1e-30 + 1e-15 * frobenius_norm(a);

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (std::sqrt(2.0 * off) <= stop) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::fabs(apq) <= 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigenvectors(k, p), vkq = eigenvectors(k, q);
          eigenvectors(k, p) = c * vkp - s * vkq;
          eigenvectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  eigenvalues.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = m(i, i);
}

}  // namespace kalnat
