#pragma once

#include <cstddef>
#include <vector>

#include "kalnat/errors.hpp"

namespace kalnat {

using Vector = std::vector<double>;

// Dense row-major matrix. Rows are contiguous so the kernels in
// kalnat::kernels can run straight over them.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  double* row(std::size_t i) noexcept { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const noexcept {
    return data_.data() + i * cols_;
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);     // A * B
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // A * B^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // A^T * B
Vector matvec(const Matrix& a, const Vector& x);     // A x
Vector matvec_t(const Matrix& a, const Vector& x);   // A^T x
Matrix outer(const Vector& x, const Vector& y);      // x y^T

void symmetrize(Matrix& a);  // a <- (a + a^T)/2
double trace(const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
bool is_symmetric(const Matrix& a, double rel_tol = 1e-10);
bool all_finite(const Matrix& a);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);
bool all_finite(const Vector& v);
Vector operator-(const Vector& a, const Vector& b);
Vector operator+(const Vector& a, const Vector& b);
Vector operator*(double s, const Vector& v);

// Lower-triangular Cholesky factor of an SPD matrix. Construction throws
// SingularMatrix (with the failing pivot index) when the input is not
// numerically positive definite.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const Matrix& a);

  std::size_t dim() const noexcept { return l_.rows(); }
  const Matrix& lower() const noexcept { return l_; }

  Vector solve(const Vector& b) const;  // A x = b
  Matrix solve(const Matrix& b) const;  // A X = B, column block

 private:
  Matrix l_;
};

// Solve A X = B for symmetric positive definite A via Cholesky; never forms
// an explicit inverse. Residual norm ||AX - B||_F / ||B||_F stays at the
// rounding level for well-conditioned inputs.
Matrix spd_solve(const Matrix& a, const Matrix& b);
Vector spd_solve(const Matrix& a, const Vector& b);

// A^{-1} as spd_solve(A, I), symmetrized.
Matrix spd_inverse(const Matrix& a);

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Intended for the small m-by-m observation-space matrices only.
void sym_eig(const Matrix& a, Vector& eigenvalues, Matrix& eigenvectors);

}  // namespace kalnat
