#include "qdisc/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <mutex>

#if defined(__x86_64__) || defined(_M_X64)
#define QDISC_X86_64 1
#include <cpuid.h>
#else
#define QDISC_X86_64 0
#endif

namespace qdisc::kernels {

namespace {

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void scal_scalar(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}
double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}
double sum_scalar(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

// Row-major saxpy-style gemm: for each (i,k), C[i,:] += A[i,k] * B[k,:].
// Fixed loop order keeps accumulation deterministic.
void gemm_acc_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

const Ops kScalarOps = {add_scalar, sub_scalar, mul_scalar, div_scalar, axpy_scalar,
                        scal_scalar, dot_scalar, sum_scalar, gemm_acc_scalar};

bool cpu_has_avx2_fma() {
#if QDISC_X86_64
    unsigned int eax, ebx, ecx, edx;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
    const bool fma = (ecx & (1u << 12)) != 0;
    if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
    const bool avx2 = (ebx & (1u << 5)) != 0;
    return fma && avx2;
#else
    return false;
#endif
}

std::atomic<const Ops*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};
std::once_flag g_init_flag;

void init_backend() {
    Backend b = cpu_has_avx2_fma() && avx2_ops() ? Backend::Avx2 : Backend::Scalar;
    if (const char* env = std::getenv("QDISC_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) b = Backend::Scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2_fma() && avx2_ops()) b = Backend::Avx2;
    }
    g_backend.store(b);
    g_active.store(b == Backend::Avx2 ? avx2_ops() : &kScalarOps);
}

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

bool avx2_supported() { return cpu_has_avx2_fma() && avx2_ops() != nullptr; }

const Ops& active() {
    std::call_once(g_init_flag, init_backend);
    return *g_active.load();
}

Backend backend() {
    std::call_once(g_init_flag, init_backend);
    return g_backend.load();
}

std::string backend_name() { return backend() == Backend::Avx2 ? "avx2" : "scalar"; }

void set_backend(Backend b) {
    std::call_once(g_init_flag, init_backend);
    if (b == Backend::Avx2 && !avx2_supported()) return;
    g_backend.store(b);
    g_active.store(b == Backend::Avx2 ? avx2_ops() : &kScalarOps);
}

}  // namespace qdisc::kernels
