#pragma once
// Inner-loop arithmetic kernels used by the tensor engine.
//
// Each kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant. The active backend is chosen once at startup from CPUID and can be
// overridden (tests pin both backends and check equivalence).

#include <cstddef>
#include <string>

namespace kacl::kernels {

enum class Backend { Scalar, Avx2 };

// Active backend. Auto-detected on first use; override for testing.
Backend active_backend();
void set_backend(Backend b);
bool avx2_supported();
std::string backend_name();

// y[i] dot x[i]
double dot(const double* a, const double* b, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// y = alpha * x
void scale(double alpha, const double* x, double* y, std::size_t n);
// out = a + b
void add(const double* a, const double* b, double* out, std::size_t n);
// out = a * b (elementwise)
void mul(const double* a, const double* b, double* out, std::size_t n);
// out = max(x, 0)
void relu(const double* x, double* out, std::size_t n);
// out = grad where x > 0 else 0
void relu_backward(const double* x, const double* grad, double* out, std::size_t n);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, const double* x, double* y, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_backward(const double* x, const double* grad, double* out, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, const double* x, double* y, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_backward(const double* x, const double* grad, double* out, std::size_t n);
}  // namespace avx2
#endif

}  // namespace kacl::kernels
