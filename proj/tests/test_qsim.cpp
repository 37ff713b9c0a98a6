#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <map>

#include "qdisc/fkm.hpp"
#include "qdisc/qsim.hpp"
#include "qdisc/rng.hpp"

using namespace qdisc;
using qsim::Pauli;

namespace {

// dense matrix of a Hamiltonian via repeated matvec on basis vectors
Eigen::MatrixXcd dense_of(const qsim::SpinHamiltonian& h) {
    const std::size_t dim = std::size_t{1} << h.n_sites;
    Eigen::MatrixXcd m(dim, dim);
    qsim::State e(dim), col(dim);
    for (std::size_t c = 0; c < dim; ++c) {
        std::fill(e.begin(), e.end(), std::complex<double>{0, 0});
        std::fill(col.begin(), col.end(), std::complex<double>{0, 0});
        e[c] = 1.0;
        qsim::apply_hamiltonian(h, e, col);
        for (std::size_t r = 0; r < dim; ++r) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = col[r];
    }
    return m;
}

qsim::State random_state(int n, std::uint64_t seed) {
    rng::Engine eng(seed);
    qsim::State psi(std::size_t{1} << n);
    double norm = 0;
    for (auto& a : psi) {
        a = {eng.normal(), eng.normal()};
        norm += std::norm(a);
    }
    norm = std::sqrt(norm);
    for (auto& a : psi) a /= norm;
    return psi;
}

}  // namespace

TEST_CASE("j1j2 term counting on a 3x3 lattice") {
    const auto h = qsim::build_j1j2(3, 0.7, 0.3);
    int nn = 0, nnn = 0, field = 0;
    for (const auto& t : h.terms) {
        if (t.ops.size() == 1)
            ++field;
        else if (t.coefficient == 1.0)
            ++nn;
        else
            ++nnn;
    }
    CHECK(nn == 12);
    CHECK(nnn == 8);
    CHECK(field == 9);
    CHECK(h.n_sites == 9);
}

TEST_CASE("j1j2 classical limit: 3x3 open Ising ground energy is -12") {
    const auto gs = qsim::ground_state(qsim::build_j1j2(3, 0.0, 0.0));
    CHECK(gs.energy == doctest::Approx(-12.0).epsilon(1e-10));
}

TEST_CASE("j1j2 large-field limit polarizes along x") {
    const auto h = qsim::build_j1j2(2, 0.3, 50.0);
    const auto gs = qsim::ground_state(h);
    for (int i = 0; i < 4; ++i)
        CHECK(qsim::expectation(gs.psi, {{1.0, {{i, Pauli::X}}}}) < -0.999);
}

TEST_CASE("hamiltonian builders produce exactly hermitian matrices") {
    for (const auto& h : {qsim::build_j1j2(2, 0.4, 0.7), qsim::build_cluster_ising(5, 0.3, -0.6),
                          qsim::build_rydberg(2, 3, 1.3, 1.1)}) {
        const auto m = dense_of(h);
        CHECK((m - m.adjoint()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("cluster ising term structure") {
    const auto h = qsim::build_cluster_ising(6, 0.2, 0.3);
    int three = 0, boundary_stab = 0, fields = 0, couplings = 0;
    for (const auto& t : h.terms) {
        if (t.ops.size() == 3) ++three;
        if (t.ops.size() == 2 && t.coefficient == -1.0) ++boundary_stab;
        if (t.ops.size() == 1) ++fields;
        if (t.ops.size() == 2 && t.ops[0].p == Pauli::X && t.ops[1].p == Pauli::X) ++couplings;
    }
    CHECK(three == 4);          // bulk stabilizers
    CHECK(boundary_stab == 2);  // boundary operators replaced by identity
    CHECK(fields == 6);
    CHECK(couplings == 5);
}

TEST_CASE("cluster state: every stabilizer expectation is 1") {
    const auto gs = qsim::ground_state(qsim::build_cluster_ising(6, 0.0, 0.0));
    // every stabilizer has expectation +1 on the cluster state
    for (int i = 0; i < 6; ++i) {
        qsim::PauliTerm stab;
        stab.coefficient = 1.0;
        if (i > 0) stab.ops.push_back({i - 1, Pauli::Z});
        stab.ops.push_back({i, Pauli::X});
        if (i + 1 < 6) stab.ops.push_back({i + 1, Pauli::Z});
        CHECK(qsim::expectation(gs.psi, stab) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("cluster ising string order at small transverse field") {
    // the Z (prod X) Z string carries weight at stabilizer spacing j - i = 2;
    // longer all-X strings vanish identically on the cluster state
    const auto gs = qsim::ground_state(qsim::build_cluster_ising(9, 0.05, 0.0));
    for (int i = 0; i + 2 < 9; ++i) {
        const double val = qsim::expectation(
            gs.psi, {{1.0, {{i, Pauli::Z}, {i + 1, Pauli::X}, {i + 2, Pauli::Z}}}});
        CHECK(val > 0.99);
        CHECK(val <= 1.0 + 1e-12);
    }
    qsim::PauliTerm long_string;
    long_string.coefficient = 1.0;
    long_string.ops.push_back({0, Pauli::Z});
    for (int k = 1; k < 8; ++k) long_string.ops.push_back({k, Pauli::X});
    long_string.ops.push_back({8, Pauli::Z});
    CHECK(std::abs(qsim::expectation(gs.psi, long_string)) < 0.01);
}

TEST_CASE("cluster ising dominant-coupling limit aligns neighbors in x") {
    const auto gs = qsim::ground_state(qsim::build_cluster_ising(6, 0.0, 80.0));
    for (int i = 0; i + 1 < 6; ++i)
        CHECK(qsim::expectation(gs.psi, {{1.0, {{i, Pauli::X}, {i + 1, Pauli::X}}}}) >
              0.999);
}

TEST_CASE("rydberg: strongly negative detuning empties the lattice") {
    const auto gs = qsim::ground_state(qsim::build_rydberg(3, 3, 1.2, -10.0));
    for (double n : qsim::site_occupations(gs.psi, 9)) CHECK(n < 0.01);
}

TEST_CASE("rydberg: checkerboard at blockade 1.2 and detuning 3") {
    const auto gs = qsim::ground_state(qsim::build_rydberg(3, 3, 1.2, 3.0));
    const auto occ = qsim::site_occupations(gs.psi, 9);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            const double n = occ[static_cast<std::size_t>(r * 3 + c)];
            if ((r + c) % 2 == 0)
                CHECK(n > 0.8);
            else
                CHECK(n < 0.2);
        }
}

TEST_CASE("rydberg rejects oversized lattices") {
    CHECK_THROWS_AS(qsim::build_rydberg(5, 5, 1.2, 1.0), ConfigError);
}

TEST_CASE("ground state: single site transverse field") {
    qsim::SpinHamiltonian h;
    h.n_sites = 1;
    h.terms.push_back({-1.0, {{0, Pauli::X}}});
    const auto gs = qsim::ground_state(h);
    CHECK(gs.energy == doctest::Approx(-1.0));
    CHECK(gs.psi[0].real() == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(gs.psi[1].real() == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("ground states are normalized and phase-fixed") {
    const auto gs = qsim::ground_state(qsim::build_j1j2(3, 0.5, 0.8));
    double norm = 0;
    std::size_t imax = 0;
    double amax = -1;
    for (std::size_t i = 0; i < gs.psi.size(); ++i) {
        norm += std::norm(gs.psi[i]);
        if (std::norm(gs.psi[i]) > amax) {
            amax = std::norm(gs.psi[i]);
            imax = i;
        }
    }
    CHECK(std::abs(norm - 1.0) < 1e-12);
    CHECK(gs.psi[imax].real() > 0);
    CHECK(std::abs(gs.psi[imax].imag()) < 1e-12);
}

TEST_CASE("lanczos matches the dense solver within 1e-9 (N <= 12)") {
    for (const auto& h :
         {qsim::build_cluster_ising(8, 0.4, 0.5), qsim::build_j1j2(3, 0.9, 1.1)}) {
        const auto dense = qsim::ground_state(h, qsim::Solver::Dense);
        const auto lanc = qsim::ground_state(h, qsim::Solver::Lanczos);
        CHECK(std::abs(dense.energy - lanc.energy) < 1e-9);
    }
}

TEST_CASE("lanczos at N=15: Rayleigh quotient and residual agree") {
    const auto h = qsim::build_cluster_ising(15, 0.3, 0.4);
    const auto gs = qsim::ground_state(h);
    qsim::State hpsi(gs.psi.size(), {0, 0});
    qsim::apply_hamiltonian(h, gs.psi, hpsi);
    std::complex<double> rayleigh = 0;
    for (std::size_t i = 0; i < gs.psi.size(); ++i) rayleigh += std::conj(gs.psi[i]) * hpsi[i];
    CHECK(std::abs(rayleigh.real() - gs.energy) < 1e-8);
    double resid = 0;
    for (std::size_t i = 0; i < gs.psi.size(); ++i)
        resid += std::norm(hpsi[i] - gs.energy * gs.psi[i]);
    CHECK(std::sqrt(resid) < 1e-8);
}

TEST_CASE("expectation basics") {
    // <+|X|+> = 1
    qsim::State plus{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)};
    CHECK(qsim::expectation(plus, {{1.0, {{0, Pauli::X}}}}) == doctest::Approx(1.0));
    // <0|Z|0> = 1
    qsim::State zero{1.0, 0.0};
    CHECK(qsim::expectation(zero, {{1.0, {{0, Pauli::Z}}}}) == doctest::Approx(1.0));
}

TEST_CASE("z sampling: deterministic state gives deterministic snapshots") {
    qsim::State zz{1, 0, 0, 0};  // |00>
    for (const auto& s : qsim::sample_z_basis(zz, 2, 50, 7)) {
        CHECK(s[0] == 0.0);
        CHECK(s[1] == 0.0);
    }
}

TEST_CASE("z sampling: Bell state statistics") {
    const double r = 1.0 / std::sqrt(2.0);
    qsim::State bell{r, 0, 0, r};
    const int M = 20000;
    int n00 = 0, n11 = 0;
    for (const auto& s : qsim::sample_z_basis(bell, 2, M, 11)) {
        if (s[0] == 0 && s[1] == 0) ++n00;
        else if (s[0] == 1 && s[1] == 1) ++n11;
        else FAIL("mixed Bell outcome");
    }
    CHECK(std::abs(n00 - M / 2) < 3.0 * std::sqrt(M) / 2.0);
    CHECK(std::abs(n11 - M / 2) < 3.0 * std::sqrt(M) / 2.0);
}

TEST_CASE("z sampling: empirical distribution matches Born probabilities") {
    const auto psi = random_state(3, 1234);
    const int M = 100000;
    std::map<int, int> counts;
    for (const auto& s : qsim::sample_z_basis(psi, 3, M, 99)) {
        int idx = 0;
        for (int i = 0; i < 3; ++i) idx |= static_cast<int>(s[static_cast<std::size_t>(i)]) << i;
        ++counts[idx];
    }
    double tv = 0;
    for (int b = 0; b < 8; ++b)
        tv += std::abs(static_cast<double>(counts[b]) / M - std::norm(psi[static_cast<std::size_t>(b)]));
    CHECK(tv / 2.0 < 0.02);
}

TEST_CASE("chi-square goodness of fit at 1e5 shots, N = 4") {
    const auto psi = random_state(4, 777);
    const int M = 100000;
    std::vector<int> counts(16, 0);
    for (const auto& s : qsim::sample_z_basis(psi, 4, M, 3)) {
        int idx = 0;
        for (int i = 0; i < 4; ++i) idx |= static_cast<int>(s[static_cast<std::size_t>(i)]) << i;
        ++counts[static_cast<std::size_t>(idx)];
    }
    double chi2 = 0;
    for (int b = 0; b < 16; ++b) {
        const double expected = M * std::norm(psi[static_cast<std::size_t>(b)]);
        if (expected < 1) continue;
        chi2 += (counts[static_cast<std::size_t>(b)] - expected) *
                (counts[static_cast<std::size_t>(b)] - expected) / expected;
    }
    CHECK(chi2 < 37.7);  // chi2(15) at p = 0.001
}

TEST_CASE("shadow sampler: basis frequencies are uniform, |0> outcomes in Z are 0") {
    qsim::State zero{1.0, 0.0};
    const int M = 30000;
    int basis_counts[3] = {0, 0, 0};
    for (const auto& rec : qsim::sample_shadows(zero, 1, M, 5)) {
        const int b = static_cast<int>(rec[0]);
        ++basis_counts[b];
        if (b == 2) CHECK(rec[1] == 0.0);  // Z basis on |0> always reads bit 0
    }
    for (int b = 0; b < 3; ++b)
        CHECK(std::abs(basis_counts[b] / static_cast<double>(M) - 1.0 / 3) < 0.01);
}

TEST_CASE("fixed x-basis sampling rotates correctly") {
    // |+> measured in X always gives outcome bit 0
    qsim::State plus{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)};
    for (const auto& s : qsim::sample_fixed_basis(plus, 1, 'x', 200, 21)) CHECK(s[0] == 0.0);
}

TEST_CASE("snake ordering") {
    CHECK(qsim::snake_order(0, 0, 3) == 0);
    CHECK(qsim::snake_order(1, 2, 3) == 3);
    CHECK_THROWS_AS(qsim::snake_order(0, 5, 3), ConfigError);
    // bijective, and consecutive snake indices are lattice neighbors
    const auto perm = qsim::snake_permutation(4, 3);
    std::vector<bool> seen(12, false);
    for (int v : perm) {
        CHECK(!seen[static_cast<std::size_t>(v)]);
        seen[static_cast<std::size_t>(v)] = true;
    }
    for (std::size_t i = 0; i + 1 < perm.size(); ++i) {
        const int r1 = perm[i] / 4, c1 = perm[i] % 4;
        const int r2 = perm[i + 1] / 4, c2 = perm[i + 1] % 4;
        CHECK(std::abs(r1 - r2) + std::abs(c1 - c2) == 1);
    }
}

// --- FKM ---

namespace {

// independent weight implementation for the 2x2 torus (simple-graph adjacency)
double oracle_log_weight_2x2(double U, double T, const std::vector<std::uint8_t>& f) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, 4);
    // sites 0..3 = (r, c) row-major; neighbors differ in one coordinate
    const int adj[4][2] = {{1, 2}, {0, 3}, {3, 0}, {2, 1}};
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 2; ++k) h(i, adj[i][k]) = -1.0;
    double nf = 0;
    for (int i = 0; i < 4; ++i) {
        h(i, i) += U * (f[static_cast<std::size_t>(i)] - 0.5);
        nf += f[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    double logw = (0.5 * U * (nf - 2.0)) / T;
    for (int k = 0; k < 4; ++k) {
        const double x = -es.eigenvalues()[k] / T;
        logw += x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return logw;
}

}  // namespace

TEST_CASE("fkm: U = 0 gives exactly half filling of the d band") {
    const auto recs = fkm::sample(4, 0.0, 0.15, 5, 42);
    for (const auto& r : recs)
        for (double d : r.d_density) CHECK(d == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("fkm: rejects non-positive temperature") {
    CHECK_THROWS_AS(fkm::sample(4, 1.0, 0.0, 1, 1), ConfigError);
    CHECK_THROWS_AS(fkm::sample(4, 1.0, -1.0, 1, 1), ConfigError);
}

TEST_CASE("fkm: library weight matches the independent oracle on 2x2") {
    rng::Engine eng(9);
    for (int trial = 0; trial < 16; ++trial) {
        std::vector<std::uint8_t> f(4);
        for (int i = 0; i < 4; ++i) f[static_cast<std::size_t>(i)] = (trial >> i) & 1;
        const double a = fkm::log_weight(2, 1.3, 0.7, f, true);
        const double b = oracle_log_weight_2x2(1.3, 0.7, f);
        CHECK(a == doctest::Approx(b).epsilon(1e-10));
    }
}

TEST_CASE("fkm: detailed balance on the 2x2 lattice") {
    const double U = 1.0, T = 0.5;
    // exact distribution from the independent oracle
    std::vector<double> w(16);
    double wmax = -1e300;
    for (int cfg = 0; cfg < 16; ++cfg) {
        std::vector<std::uint8_t> f(4);
        for (int i = 0; i < 4; ++i) f[static_cast<std::size_t>(i)] = (cfg >> i) & 1;
        w[static_cast<std::size_t>(cfg)] = oracle_log_weight_2x2(U, T, f);
        wmax = std::max(wmax, w[static_cast<std::size_t>(cfg)]);
    }
    double z = 0;
    for (auto& v : w) {
        v = std::exp(v - wmax);
        z += v;
    }
    for (auto& v : w) v /= z;

    fkm::Options opts;
    opts.flips_per_record = 20;  // thin to suppress autocorrelation
    const int n_records = 8000;
    const auto recs = fkm::sample(2, U, T, n_records, 4242, opts);
    std::vector<int> counts(16, 0);
    for (const auto& r : recs) {
        int cfg = 0;
        for (int i = 0; i < 4; ++i) cfg |= static_cast<int>(r.f[static_cast<std::size_t>(i)]) << i;
        ++counts[static_cast<std::size_t>(cfg)];
    }
    for (int cfg = 0; cfg < 16; ++cfg) {
        const double p_hat = counts[static_cast<std::size_t>(cfg)] / static_cast<double>(n_records);
        const double p = w[static_cast<std::size_t>(cfg)];
        const double se = std::sqrt(p * (1 - p) / n_records);
        CHECK(std::abs(p_hat - p) < 3.0 * se + 1e-9);
    }
}

TEST_CASE("fkm: average f filling stays near one half") {
    const auto recs = fkm::sample(4, 1.0, 0.2, 4000, 31);
    double nf = 0;
    for (const auto& r : recs)
        for (auto b : r.f) nf += b;
    nf /= static_cast<double>(recs.size()) * 16.0;
    CHECK(std::abs(nf - 0.5) < 0.02);
}

TEST_CASE("fkm: deep CDW phase shows checkerboard order") {
    const auto recs = fkm::sample(4, 8.0, 0.01, 200, 17);
    double order = 0;
    for (const auto& r : recs) order += fkm::staggered_f_order(r.f, 4);
    order /= static_cast<double>(recs.size());
    CHECK(order > 0.9);
}
