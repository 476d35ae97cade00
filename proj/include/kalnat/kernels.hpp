#pragma once

#include <cstddef>

// Data-parallel inner loops. Every dense operation in the library bottoms out
// in one of these four kernels; each has a scalar reference implementation and
// an AVX2 variant selected once at startup (override with KALNAT_KERNELS=
// scalar|avx2|auto or set_backend). The two paths are equivalence-tested.
namespace kalnat::kernels {

enum class Backend { Scalar, Avx2 };

Backend active_backend();
void set_backend(Backend b);  // throws InvalidArgument if b is unsupported here
bool avx2_supported();
const char* backend_name(Backend b);

// sum_i a[i]*b[i]
double dot(const double* a, const double* b, std::size_t n);

// sum_i a[i]*w[i]*b[i] — quadratic forms against a diagonal covariance
double weighted_dot(const double* a, const double* w, const double* b,
                    std::size_t n);

// y[i] += alpha*x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

// x[i] *= alpha
void scale(double alpha, double* x, std::size_t n);

}  // namespace kalnat::kernels
