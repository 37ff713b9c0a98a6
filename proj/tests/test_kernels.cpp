#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "qdisc/kernels.hpp"
#include "qdisc/rng.hpp"

using namespace qdisc;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    rng::Engine eng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = eng.normal();
    return v;
}

}  // namespace

TEST_CASE("dispatch reports a backend and scalar table is complete") {
    CHECK((kernels::backend_name() == "avx2" || kernels::backend_name() == "scalar"));
    const auto& ops = kernels::scalar_ops();
    CHECK(ops.add != nullptr);
    CHECK(ops.gemm_acc != nullptr);
}

TEST_CASE("elementwise kernels are bit-identical across backends") {
    if (!kernels::avx2_supported()) return;
    const auto& sc = kernels::scalar_ops();
    const auto& vx = *kernels::avx2_ops();
    // lengths straddle the vector width to cover remainder tails
    for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 64u, 1001u}) {
        auto a = random_vec(n, 11 + n);
        auto b = random_vec(n, 23 + n);
        std::vector<double> r1(n), r2(n);
        sc.add(a.data(), b.data(), r1.data(), n);
        vx.add(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        sc.sub(a.data(), b.data(), r1.data(), n);
        vx.sub(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        sc.mul(a.data(), b.data(), r1.data(), n);
        vx.mul(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        sc.div(a.data(), b.data(), r1.data(), n);
        vx.div(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        auto y1 = b, y2 = b;
        sc.scal(1.7, y1.data(), n);
        vx.scal(1.7, y2.data(), n);
        CHECK(y1 == y2);
    }
}

TEST_CASE("reductions agree across backends within accumulation-order tolerance") {
    if (!kernels::avx2_supported()) return;
    const auto& sc = kernels::scalar_ops();
    const auto& vx = *kernels::avx2_ops();
    for (std::size_t n : {5u, 32u, 77u, 4096u}) {
        auto a = random_vec(n, 5 + n);
        auto b = random_vec(n, 7 + n);
        const double d1 = sc.dot(a.data(), b.data(), n);
        const double d2 = vx.dot(a.data(), b.data(), n);
        CHECK(std::abs(d1 - d2) <= 1e-12 * (1.0 + std::abs(d1)) * std::sqrt(double(n)));
        const double s1 = sc.sum(a.data(), n);
        const double s2 = vx.sum(a.data(), n);
        CHECK(std::abs(s1 - s2) <= 1e-12 * (1.0 + std::abs(s1)) * std::sqrt(double(n)));
    }
}

TEST_CASE("axpy agrees across backends (fma rounding tolerance)") {
    if (!kernels::avx2_supported()) return;
    const auto& sc = kernels::scalar_ops();
    const auto& vx = *kernels::avx2_ops();
    for (std::size_t n : {6u, 63u, 257u}) {
        auto x = random_vec(n, 31 + n);
        auto y1 = random_vec(n, 37 + n);
        auto y2 = y1;
        sc.axpy(0.37, x.data(), y1.data(), n);
        vx.axpy(0.37, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (1.0 + std::abs(y1[i])));
    }
}

TEST_CASE("gemm equivalence scalar vs avx2") {
    if (!kernels::avx2_supported()) return;
    const auto& sc = kernels::scalar_ops();
    const auto& vx = *kernels::avx2_ops();
    for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{
             {1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 17, 19}, {32, 64, 48}}) {
        auto a = random_vec(m * k, 101 + m);
        auto b = random_vec(k * n, 103 + n);
        std::vector<double> c1(m * n, 0.25), c2(m * n, 0.25);
        sc.gemm_acc(a.data(), b.data(), c1.data(), m, k, n);
        vx.gemm_acc(a.data(), b.data(), c2.data(), m, k, n);
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(std::abs(c1[i] - c2[i]) <=
                  1e-12 * (1.0 + std::abs(c1[i])) * std::sqrt(double(k)));
    }
}

TEST_CASE("gemm matches a naive triple loop") {
    const auto& ops = kernels::active();
    const std::size_t m = 9, k = 11, n = 6;
    auto a = random_vec(m * k, 301);
    auto b = random_vec(k * n, 303);
    std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
    ops.gemm_acc(a.data(), b.data(), c.data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            ref[i * n + j] = s;
        }
    for (std::size_t i = 0; i < m * n; ++i)
        CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("backend selection is sticky and overridable") {
    const auto initial = kernels::backend();
    kernels::set_backend(kernels::Backend::Scalar);
    CHECK(kernels::backend() == kernels::Backend::Scalar);
    kernels::set_backend(initial);
    CHECK(kernels::backend() == initial);
}
