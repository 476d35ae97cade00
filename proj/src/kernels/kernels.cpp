#include "kalnat/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "kalnat/errors.hpp"

namespace kalnat::kernels {

namespace detail {

double dot_scalar(const double* a, const double* b, std::size_t n);
double weighted_dot_scalar(const double* a, const double* w, const double* b,
                           std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void scale_scalar(double alpha, double* x, std::size_t n);

#ifdef KALNAT_HAVE_AVX2
double dot_avx2(const double* a, const double* b, std::size_t n);
double weighted_dot_avx2(const double* a, const double* w, const double* b,
                         std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void scale_avx2(double alpha, double* x, std::size_t n);
#endif

}  // namespace detail

namespace {

struct OpsTable {
  Backend id;
  double (*dot)(const double*, const double*, std::size_t);
  double (*weighted_dot)(const double*, const double*, const double*,
                         std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scale)(double, double*, std::size_t);
};

constexpr OpsTable kScalarOps = {Backend::Scalar, detail::dot_scalar,
                                 detail::weighted_dot_scalar,
                                 detail::axpy_scalar, detail::scale_scalar};

#ifdef KALNAT_HAVE_AVX2
constexpr OpsTable kAvx2Ops = {Backend::Avx2, detail::dot_avx2,
                               detail::weighted_dot_avx2, detail::axpy_avx2,
                               detail::scale_avx2};
#endif

std::atomic<const OpsTable*> g_ops{nullptr};

const OpsTable* table_for(Backend b) {
#ifdef KALNAT_HAVE_AVX2
  if (b == Backend::Avx2) return &kAvx2Ops;
#endif
  (void)b;
  return &kScalarOps;
}

const OpsTable* pick_initial() {
  Backend b = avx2_supported() ? Backend::Avx2 : Backend::Scalar;
  if (const char* env = std::getenv("KALNAT_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) {
      b = Backend::Scalar;
    } else if (std::strcmp(env, "avx2") == 0 && avx2_supported()) {
      b = Backend::Avx2;
    }
  }
  return table_for(b);
}

inline const OpsTable& ops() {
  const OpsTable* t = g_ops.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = pick_initial();
    g_ops.store(t, std::memory_order_release);
  }
  return *t;
}

}  // namespace

bool avx2_supported() {
#if defined(KALNAT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() { return ops().id; }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_supported()) {
    throw InvalidArgument("kernels: AVX2 backend not supported on this CPU/build");
  }
  g_ops.store(table_for(b), std::memory_order_release);
}

const char* backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) {
  return ops().dot(a, b, n);
}

double weighted_dot(const double* a, const double* w, const double* b,
                    std::size_t n) {
  return ops().weighted_dot(a, w, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  ops().axpy(alpha, x, y, n);
}

void scale(double alpha, double* x, std::size_t n) {
  ops().scale(alpha, x, n);
}

}  // namespace kalnat::kernels
