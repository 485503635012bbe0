#include "kacl/kernels.hpp"

namespace kacl::kernels {

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

namespace {
Backend detect() { return avx2_supported() ? Backend::Avx2 : Backend::Scalar; }
Backend g_backend = detect();
}  // namespace

Backend active_backend() { return g_backend; }
void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_supported()) b = Backend::Scalar;
  g_backend = b;
}
std::string backend_name() { return g_backend == Backend::Avx2 ? "avx2" : "scalar"; }

#if defined(__x86_64__) || defined(_M_X64)
#define KACL_DISPATCH(fn, ...) \
  return g_backend == Backend::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__)
#else
#define KACL_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

double dot(const double* a, const double* b, std::size_t n) { KACL_DISPATCH(dot, a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { KACL_DISPATCH(axpy, alpha, x, y, n); }
void scale(double alpha, const double* x, double* y, std::size_t n) { KACL_DISPATCH(scale, alpha, x, y, n); }
void add(const double* a, const double* b, double* out, std::size_t n) { KACL_DISPATCH(add, a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { KACL_DISPATCH(mul, a, b, out, n); }
void relu(const double* x, double* out, std::size_t n) { KACL_DISPATCH(relu, x, out, n); }
void relu_backward(const double* x, const double* grad, double* out, std::size_t n) {
  KACL_DISPATCH(relu_backward, x, grad, out, n);
}

#undef KACL_DISPATCH

}  // namespace kacl::kernels
