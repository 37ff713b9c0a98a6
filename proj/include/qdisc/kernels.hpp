#pragma once

#include <cstddef>
#include <string>

// Data-parallel f64 kernels behind the tensor engine. Every kernel has a
// scalar reference implementation and (on x86-64 with AVX2+FMA) a vectorized
// variant; the active backend is resolved once at startup from cpuid and can
// be overridden with set_backend() or the QDISC_KERNELS environment variable
// ("scalar" | "avx2"). Elementwise kernels are bit-identical across backends;
// reductions and gemm differ only in accumulation order.
namespace qdisc::kernels {

enum class Backend { Scalar, Avx2 };

struct Ops {
    void (*add)(const double*, const double*, double*, std::size_t);
    void (*sub)(const double*, const double*, double*, std::size_t);
    void (*mul)(const double*, const double*, double*, std::size_t);
    void (*div)(const double*, const double*, double*, std::size_t);
    // y += a * x
    void (*axpy)(double, const double*, double*, std::size_t);
    // x *= a
    void (*scal)(double, double*, std::size_t);
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    // C[m x n] += A[m x k] * B[k x n], all row-major, no aliasing
    void (*gemm_acc)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
};

// Active kernel table (never null after first use).
const Ops& active();

Backend backend();
std::string backend_name();
void set_backend(Backend b);

// True when the CPU supports the AVX2 path.
bool avx2_supported();

// Scalar reference table, exposed for equivalence tests.
const Ops& scalar_ops();
// AVX2 table; null members off x86-64 builds. Check avx2_supported() first.
const Ops* avx2_ops();

}  // namespace qdisc::kernels
