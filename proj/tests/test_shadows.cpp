#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "qdisc/qsim.hpp"
#include "qdisc/rng.hpp"
#include "qdisc/shadows.hpp"

using namespace qdisc;
using qsim::Pauli;

namespace {

// exact expectation of the single-shot estimator for a 1-qubit state and
// observable, by enumerating the 3 bases x 2 outcomes
double enumerated_single_shot_mean(const qsim::State& psi, const qsim::PauliTerm& obs) {
    double mean = 0;
    for (int b = 0; b < 3; ++b) {
        qsim::State rot = psi;
        // reuse the sampler path: fixed-basis probabilities via rotation
        const char basis = b == 0 ? 'x' : b == 1 ? 'y' : 'z';
        // probability of outcome bit 0/1 in this basis
        qsim::State work = rot;
        if (basis == 'x') {
            const double r = 1.0 / std::sqrt(2.0);
            work = {r * (rot[0] + rot[1]), r * (rot[0] - rot[1])};
        } else if (basis == 'y') {
            const double r = 1.0 / std::sqrt(2.0);
            work = {r * (rot[0] - std::complex<double>(0, 1) * rot[1]),
                    r * (rot[0] + std::complex<double>(0, 1) * rot[1])};
        }
        for (int bit = 0; bit < 2; ++bit) {
            const double p = std::norm(work[static_cast<std::size_t>(bit)]);
            shadows::ShadowRecord rec;
            rec.basis = {static_cast<Pauli>(b)};
            rec.outcome = {1 - 2 * bit};
            mean += (1.0 / 3.0) * p * shadows::pauli_single_shot(rec, obs);
        }
    }
    return mean;
}

qsim::State bloch_state(double theta, double phi) {
    return {std::cos(theta / 2),
            std::exp(std::complex<double>(0, phi)) * std::sin(theta / 2)};
}

}  // namespace

TEST_CASE("single-shot site matrices") {
    // (Z, +1) -> diag(2, -1)
    auto m = shadows::single_shot_site(Pauli::Z, 1);
    CHECK(m[0] == std::complex<double>(2.0));
    CHECK(m[3] == std::complex<double>(-1.0));
    CHECK(m[1] == std::complex<double>(0.0));
    // (X, +1) -> [[1/2, 3/2], [3/2, 1/2]]
    m = shadows::single_shot_site(Pauli::X, 1);
    CHECK(m[0] == std::complex<double>(0.5));
    CHECK(m[1] == std::complex<double>(1.5));
    CHECK(m[2] == std::complex<double>(1.5));
    CHECK(m[3] == std::complex<double>(0.5));
    // trace is 1 for every basis and outcome
    for (int b = 0; b < 3; ++b)
        for (int o : {1, -1}) {
            const auto site = shadows::single_shot_site(static_cast<Pauli>(b), o);
            CHECK((site[0] + site[3]).real() == doctest::Approx(1.0));
        }
}

TEST_CASE("pauli single shot: match gives 3b, mismatch gives zero") {
    shadows::ShadowRecord rec;
    rec.basis = {Pauli::Z};
    rec.outcome = {1};
    CHECK(shadows::pauli_single_shot(rec, {1.0, {{0, Pauli::Z}}}) == 3.0);
    rec.basis = {Pauli::X};
    CHECK(shadows::pauli_single_shot(rec, {1.0, {{0, Pauli::Z}}}) == 0.0);
}

TEST_CASE("two-qubit ZZ on |00>: enumerated single-shot mean is 1") {
    // all 9 basis pairs x outcomes on the product state |00>
    double mean = 0;
    for (int b1 = 0; b1 < 3; ++b1)
        for (int b2 = 0; b2 < 3; ++b2) {
            // on |0>, X and Y outcomes are uniform, Z always bit 0
            const double pb = 1.0 / 9.0;
            for (int o1 = 0; o1 < 2; ++o1)
                for (int o2 = 0; o2 < 2; ++o2) {
                    const double p1 = (b1 == 2) ? (o1 == 0 ? 1.0 : 0.0) : 0.5;
                    const double p2 = (b2 == 2) ? (o2 == 0 ? 1.0 : 0.0) : 0.5;
                    shadows::ShadowRecord rec;
                    rec.basis = {static_cast<Pauli>(b1), static_cast<Pauli>(b2)};
                    rec.outcome = {1 - 2 * o1, 1 - 2 * o2};
                    mean += pb * p1 * p2 *
                            shadows::pauli_single_shot(
                                rec, {1.0, {{0, Pauli::Z}, {1, Pauli::Z}}});
                }
        }
    CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("unbiasedness on a Bloch-sphere grid, exact enumeration") {
    // 20 states; the enumerated estimator mean equals <O> to machine precision
    const std::vector<qsim::PauliTerm> observables = {
        {1.0, {{0, Pauli::X}}}, {1.0, {{0, Pauli::Y}}}, {1.0, {{0, Pauli::Z}}}};
    for (int ti = 0; ti < 5; ++ti)
        for (int pi = 0; pi < 4; ++pi) {
            const double theta = 3.14159265358979 * (ti + 0.5) / 5.0;
            const double phi = 6.28318530717959 * pi / 4.0;
            const auto psi = bloch_state(theta, phi);
            for (const auto& obs : observables) {
                const double exact = qsim::expectation(psi, obs);
                const double est = enumerated_single_shot_mean(psi, obs);
                CHECK(est == doctest::Approx(exact).epsilon(1e-12));
            }
        }
}

TEST_CASE("median of means") {
    CHECK(shadows::median_of_means({1, 2, 3, 4, 5, 6}, 3) == doctest::Approx(3.5));
    // K = 1 is the plain mean
    CHECK(shadows::median_of_means({1, 2, 3, 4}, 1) == doctest::Approx(2.5));
    // robustness: one huge outlier among zeros
    std::vector<double> vals(99, 0.0);
    vals.push_back(1e9);
    CHECK(shadows::median_of_means(vals, 10) == doctest::Approx(0.0));
    CHECK_THROWS_AS(shadows::median_of_means({1.0}, 5), ConfigError);
    CHECK_THROWS_AS(shadows::median_of_means({1.0}, 0), ConfigError);
}

TEST_CASE("estimate_observable on sampled shadows tracks exact values") {
    qsim::State zero{1.0, 0.0};
    const auto snaps = qsim::sample_shadows(zero, 1, 100000, 13);
    const auto ens = shadows::from_snapshots(snaps, 1);
    const auto est = shadows::estimate_observable(ens, {1.0, {{0, Pauli::Z}}}, 10);
    CHECK(std::abs(est.value - 1.0) < 3.0 * est.std_error + 1e-9);

    // cluster state stabilizer at N = 3
    const auto gs = qsim::ground_state(qsim::build_cluster_ising(3, 0.0, 0.0));
    const auto snaps3 = qsim::sample_shadows(gs.psi, 3, 60000, 29);
    const auto ens3 = shadows::from_snapshots(snaps3, 3);
    const auto stab = shadows::estimate_observable(
        ens3, {1.0, {{0, Pauli::Z}, {1, Pauli::X}, {2, Pauli::Z}}}, 10);
    CHECK(std::abs(stab.value - 1.0) < 3.0 * stab.std_error + 0.01);
}

TEST_CASE("maximally mixed qubit estimates zero") {
    // simulate the mixed state via random +-Z preparations
    rng::Engine eng(7);
    std::vector<qsim::Snapshot> snaps;
    for (int m = 0; m < 40000; ++m) {
        const bool up = eng.uniform() < 0.5;
        qsim::State psi = up ? qsim::State{1.0, 0.0} : qsim::State{0.0, 1.0};
        auto s = qsim::sample_shadows(psi, 1, 1, rng::derive(3, static_cast<std::uint64_t>(m)));
        snaps.push_back(s[0]);
    }
    const auto est = shadows::estimate_observable(shadows::from_snapshots(snaps, 1),
                                                  {1.0, {{0, Pauli::Z}}}, 10);
    CHECK(std::abs(est.value) < 3.0 * est.std_error + 0.02);
}

TEST_CASE("variance scales like 3^w for weight-w strings") {
    // product |0...0> state: single-shot values are 0 or +-3^w
    qsim::State zero(8, {0, 0});
    zero[0] = 1.0;
    const auto snaps = qsim::sample_shadows(zero, 3, 60000, 57);
    const auto ens = shadows::from_snapshots(snaps, 3);
    auto variance_of = [&](const qsim::PauliTerm& obs) {
        double m1 = 0, m2 = 0;
        for (const auto& rec : ens.records) {
            const double v = shadows::pauli_single_shot(rec, obs);
            m1 += v;
            m2 += v * v;
        }
        m1 /= static_cast<double>(ens.records.size());
        m2 /= static_cast<double>(ens.records.size());
        return m2 - m1 * m1;
    };
    const double v1 = variance_of({1.0, {{0, Pauli::Z}}});
    const double v2 = variance_of({1.0, {{0, Pauli::Z}, {1, Pauli::Z}}});
    const double v3 = variance_of({1.0, {{0, Pauli::Z}, {1, Pauli::Z}, {2, Pauli::Z}}});
    // Var[o_hat] for Z...Z on |0...0> is 3^w - 1
    CHECK(v1 / 2.0 == doctest::Approx(1.0).epsilon(0.5));
    CHECK(v2 / 8.0 == doctest::Approx(1.0).epsilon(0.5));
    CHECK(v3 / 26.0 == doctest::Approx(1.0).epsilon(0.5));
    // growth within a factor of 1.5 of 3x per weight
    CHECK(v2 / v1 > 3.0 / 1.5);
    CHECK(v2 / v1 < 3.0 * 2.0);
    CHECK(v3 / v2 > 3.0 / 1.5);
    CHECK(v3 / v2 < 3.0 * 2.0);
}

TEST_CASE("K = 1 estimate equals the sample mean regardless of order") {
    qsim::State plus{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)};
    auto snaps = qsim::sample_shadows(plus, 1, 999, 5);
    const auto ens = shadows::from_snapshots(snaps, 1);
    const auto est = shadows::estimate_observable(ens, {1.0, {{0, Pauli::X}}}, 1);
    double mean = 0;
    for (const auto& rec : ens.records)
        mean += shadows::pauli_single_shot(rec, {1.0, {{0, Pauli::X}}});
    mean /= static_cast<double>(ens.records.size());
    CHECK(est.value == doctest::Approx(mean).epsilon(1e-12));
    // permuted order, same K = 1 value
    std::reverse(snaps.begin(), snaps.end());
    const auto est2 =
        shadows::estimate_observable(shadows::from_snapshots(snaps, 1), {1.0, {{0, Pauli::X}}}, 1);
    CHECK(est2.value == doctest::Approx(est.value).epsilon(1e-12));
}

TEST_CASE("observable mini-language") {
    const auto term = shadows::parse_observable("z1 X2 z3", 5);
    REQUIRE(term.ops.size() == 3);
    CHECK(term.ops[0].site == 0);
    CHECK(term.ops[0].p == Pauli::Z);
    CHECK(term.ops[1].site == 1);
    CHECK(term.ops[1].p == Pauli::X);
    CHECK_THROWS_AS(shadows::parse_observable("Q1", 3), ConfigError);
    CHECK_THROWS_AS(shadows::parse_observable("Z9", 3), ConfigError);
    CHECK_THROWS_AS(shadows::parse_observable("Z1 X1", 3), ConfigError);
    CHECK_THROWS_AS(shadows::parse_observable("", 3), ConfigError);
}

TEST_CASE("empty ensemble is rejected") {
    shadows::ShadowEnsemble ens;
    ens.n_sites = 1;
    CHECK_THROWS_AS(shadows::estimate_observable(ens, qsim::PauliTerm{1.0, {{0, Pauli::Z}}}, 1),
                    DataError);
}
