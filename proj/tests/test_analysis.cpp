#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qdisc/analysis.hpp"
#include "qdisc/fkm.hpp"

using namespace qdisc;

namespace {

qsim::Snapshot checkerboard(int lx, int ly, int parity) {
    qsim::Snapshot s(static_cast<std::size_t>(lx * ly));
    for (int r = 0; r < ly; ++r)
        for (int c = 0; c < lx; ++c)
            s[static_cast<std::size_t>(r * lx + c)] = ((r + c) % 2 == parity) ? 1.0 : 0.0;
    return s;
}

}  // namespace

TEST_CASE("correlators on simple patterns") {
    const qsim::Geometry square{qsim::Geometry::Kind::Square, 3, 3};
    // all zeros: every +-1 spin is +1
    std::vector<qsim::Snapshot> zeros(4, qsim::Snapshot(9, 0.0));
    CHECK(analysis::nn_correlator(zeros, square) == doctest::Approx(1.0));
    CHECK(analysis::nnn_correlator(zeros, square) == doctest::Approx(1.0));
    // perfect checkerboard: NN anti-aligned, NNN aligned
    std::vector<qsim::Snapshot> cb{checkerboard(3, 3, 0)};
    CHECK(analysis::nn_correlator(cb, square) == doctest::Approx(-1.0));
    CHECK(analysis::nnn_correlator(cb, square) == doctest::Approx(1.0));
    // random bits are uncorrelated within 3 / sqrt(M * bonds)
    rng::Engine eng(8);
    std::vector<qsim::Snapshot> random;
    const int M = 2000;
    for (int m = 0; m < M; ++m) {
        qsim::Snapshot s(9);
        for (auto& v : s) v = eng.uniform() < 0.5 ? 1.0 : 0.0;
        random.push_back(std::move(s));
    }
    CHECK(std::abs(analysis::nn_correlator(random, square)) < 3.0 / std::sqrt(M * 12.0));
    // bounded by construction
    CHECK(std::abs(analysis::nnn_correlator(random, square)) <= 1.0);
}

TEST_CASE("string order on states") {
    // on the cluster state the string at stabilizer spacing (j = i + 2) is a
    // stabilizer itself and evaluates to exactly +1; the long all-X string
    // vanishes there
    const auto gs = qsim::ground_state(qsim::build_cluster_ising(7, 0.0, 0.0));
    CHECK(std::abs(analysis::string_order_state(gs.psi, 0, 2) - 1.0) < 1e-10);
    CHECK(std::abs(analysis::string_order_state(gs.psi, 3, 5) - 1.0) < 1e-10);
    CHECK(std::abs(analysis::string_order_state(gs.psi, 0, 6)) < 1e-10);
    // product state |0...0>: any string containing an X has zero expectation
    qsim::State zero(1 << 5, {0, 0});
    zero[0] = 1.0;
    CHECK(analysis::string_order_state(zero, 0, 3) == doctest::Approx(0.0));
}

TEST_CASE("string order from shadows converges to the exact value") {
    const auto gs = qsim::ground_state(qsim::build_cluster_ising(5, 0.1, 0.2));
    const double exact = analysis::string_order_state(gs.psi, 1, 3);
    double first_err = 0, final_err = 0, final_se = 0;
    for (int m : {1000, 10000, 100000}) {
        const auto snaps = qsim::sample_shadows(gs.psi, 5, m, 71);
        const auto est =
            analysis::string_order_shadows(shadows::from_snapshots(snaps, 5), 1, 3, 10);
        final_err = std::abs(est.value - exact);
        final_se = est.std_error;
        if (m == 1000) first_err = final_err;
    }
    CHECK(final_err < first_err + 1e-9);  // error decreased from M = 1e3 to 1e5
    CHECK(final_err < 3.0 * final_se + 0.02);
}

TEST_CASE("corner order on constructed patterns") {
    // odd lattice so all four corners share the same sublattice
    const int L = 7, NN = L * L;
    // all empty -> f = 0
    std::vector<qsim::Snapshot> empty(3, qsim::Snapshot(static_cast<std::size_t>(NN), 0.0));
    const auto co_empty = analysis::corner_order(empty, L, L);
    CHECK(co_empty.f == doctest::Approx(0.0));

    // corner pattern: corners and their edge-adjacent sites excited,
    // diagonals empty, bulk empty -> f = 2 and nothing to subtract
    qsim::Snapshot corner_pat(static_cast<std::size_t>(NN), 0.0);
    auto site = [L](int r, int c) { return static_cast<std::size_t>(r * L + c); };
    for (auto [r, c] : {std::pair{0, 0}, {0, L - 1}, {L - 1, 0}, {L - 1, L - 1}}) {
        corner_pat[site(r, c)] = 1.0;
        corner_pat[site(r, c == 0 ? 1 : L - 2)] = 1.0;
        corner_pat[site(r == 0 ? 1 : L - 2, c)] = 1.0;
    }
    const auto co_corner = analysis::corner_order({corner_pat}, L, L);
    CHECK(co_corner.f == doctest::Approx(2.0));
    CHECK(co_corner.bulk_edge_nn == doctest::Approx(0.0));

    // checkerboard with corners occupied: f = 1 from the diagonal product
    const auto co_cb = analysis::corner_order({checkerboard(L, L, 0)}, L, L);
    CHECK(co_cb.f == doctest::Approx(1.0));

    // corner pattern maximal among the constructed set
    CHECK(co_corner.f > co_cb.f);
    CHECK(co_cb.f > co_empty.f);

    // sampled checkerboard with defects: occupancy NN correlator turns
    // positive, suppressing f_tilde relative to f
    rng::Engine eng(4);
    std::vector<qsim::Snapshot> noisy;
    for (int m = 0; m < 200; ++m) {
        auto s = checkerboard(L, L, 0);
        for (auto& v : s)
            if (eng.uniform() < 0.1) v = 1.0 - v;
        noisy.push_back(std::move(s));
    }
    const auto co_noisy = analysis::corner_order(noisy, L, L);
    CHECK(co_noisy.f_tilde < co_noisy.f);
}

TEST_CASE("x bubble distribution on simple chains") {
    // alternating snapshot: all bubbles have size 1
    std::vector<qsim::Snapshot> alt{{0, 1, 0, 1, 0, 1}};
    auto dist = analysis::x_bubble_distribution(alt);
    CHECK(dist.p[0] == doctest::Approx(1.0));
    CHECK(dist.counts[0] == 6);
    // uniform snapshot: one bubble of size N
    std::vector<qsim::Snapshot> uni{{1, 1, 1, 1, 1}};
    dist = analysis::x_bubble_distribution(uni);
    CHECK(dist.p[4] == doctest::Approx(1.0));
    // normalization and exact spin-count accounting
    rng::Engine eng(12);
    std::vector<qsim::Snapshot> random;
    const int M = 500, N = 15;
    for (int m = 0; m < M; ++m) {
        qsim::Snapshot s(static_cast<std::size_t>(N));
        for (auto& v : s) v = eng.uniform() < 0.5 ? 1.0 : 0.0;
        random.push_back(std::move(s));
    }
    dist = analysis::x_bubble_distribution(random);
    double psum = 0;
    std::int64_t spins = 0;
    for (std::size_t s = 0; s < dist.p.size(); ++s) {
        psum += dist.p[s];
        spins += dist.counts[s] * static_cast<std::int64_t>(s + 1);
    }
    CHECK(psum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spins == static_cast<std::int64_t>(M) * N);
    // iid fair bits follow a geometric law away from the edges
    for (int s = 1; s <= 4; ++s) {
        const double expected = std::pow(2.0, -s);  // P(s) / P(1) halves per step
        CHECK(dist.p[static_cast<std::size_t>(s - 1)] / dist.p[0] ==
              doctest::Approx(expected / 0.5).epsilon(0.15));
    }
}

TEST_CASE("power-law and exponential fits") {
    // exact s^-2 input: eta = -2 and R^2 = 1 to 1e-12
    analysis::BubbleDistribution dist;
    dist.p.resize(10);
    double z = 0;
    for (int s = 1; s <= 10; ++s) z += 1.0 / (s * s);
    for (int s = 1; s <= 10; ++s) dist.p[static_cast<std::size_t>(s - 1)] = 1.0 / (s * s) / z;
    dist.total = 1;
    dist.counts.assign(10, 1);
    const auto fit = analysis::fit_power_law(dist);
    CHECK(fit.exponent == doctest::Approx(-2.0).epsilon(1e-10));
    CHECK(fit.r2 > 1.0 - 1e-12);
    CHECK(fit.reliable);

    // noisy synthetic power law recovers eta within +-0.05
    rng::Engine eng(77);
    analysis::BubbleDistribution noisy;
    noisy.p.resize(12);
    const double eta = -1.6;
    for (int s = 1; s <= 12; ++s)
        noisy.p[static_cast<std::size_t>(s - 1)] =
            std::pow(s, eta) * std::exp(0.01 * eng.normal());
    noisy.total = 1;
    noisy.counts.assign(12, 1);
    const auto nfit = analysis::fit_power_law(noisy);
    CHECK(nfit.exponent == doctest::Approx(eta).epsilon(0.05 / std::abs(eta)));

    // exact exponential: scale recovered, R^2 = 1
    analysis::BubbleDistribution ex;
    ex.p.resize(10);
    for (int s = 1; s <= 10; ++s) ex.p[static_cast<std::size_t>(s - 1)] = std::exp(-s / 2.5);
    ex.total = 1;
    ex.counts.assign(10, 1);
    const auto efit = analysis::fit_exponential(ex);
    CHECK(efit.scale == doctest::Approx(2.5).epsilon(1e-8));
    CHECK(efit.r2 > 1.0 - 1e-12);

    // fewer than 4 support bins flags unreliable
    analysis::BubbleDistribution small;
    small.p = {0.7, 0.3};
    small.total = 1;
    small.counts = {7, 3};
    CHECK(!analysis::fit_power_law(small).reliable);
}

TEST_CASE("ipr") {
    CHECK(analysis::ipr_from_cp({0.5, 0.5, 0.5, 0.5}) == doctest::Approx(0.25));
    CHECK(analysis::ipr_from_cp({1, 0, 1, 0}) == doctest::Approx(0.5));  // fraction of ones
    // bounded by the mean
    const std::vector<double> p{0.2, 0.9, 0.4};
    double mean = (0.2 + 0.9 + 0.4) / 3;
    CHECK(analysis::ipr_from_cp(p) <= mean);
    CHECK_THROWS_AS(analysis::ipr_from_cp({1.5}), ConfigError);
}

TEST_CASE("fd repulsion map: U = 0 raw correlator vanishes") {
    data::Dataset ds;
    ds.kind = data::Kind::FkmHybrid;
    ds.system = "fkm";
    ds.n_sites = 4;
    ds.geometry = {qsim::Geometry::Kind::Square, 2, 2};
    ds.grid.axis_names = {"U", "T"};
    ds.grid.axis_values = {{0.0}, {0.15}};
    ds.shots = 50;
    ds.seed = 5;
    const auto recs = fkm::sample(2, 0.0, 0.15, 50, 5);
    std::vector<qsim::Snapshot> snaps;
    for (const auto& r : recs) {
        qsim::Snapshot s(8);
        for (int i = 0; i < 4; ++i) {
            s[static_cast<std::size_t>(2 * i)] = r.f[static_cast<std::size_t>(i)];
            s[static_cast<std::size_t>(2 * i + 1)] = r.d_density[static_cast<std::size_t>(i)];
        }
        snaps.push_back(std::move(s));
    }
    ds.records = {snaps};

    vae::ArchitectureConfig arch = vae::ArchitectureConfig::for_dataset(ds);
    arch.d_model_encoder = 8;
    arch.d_model_decoder = 8;
    arch.heads_encoder = 2;
    arch.heads_decoder = 2;
    arch.n_layers = 1;
    arch.latent_dim = 2;
    vae::VaeModel model(arch, 3);
    const auto map = analysis::fd_repulsion_map(model, ds);
    // at U = 0 the d densities are exactly 1/2, so (d - 1/2) kills the correlator
    CHECK(map.raw_correlator[0] == doctest::Approx(0.0).epsilon(1e-12));
    // untrained heads sit near 1/2, so the cp product is near 1/4
    CHECK(map.cp_product[0] > 0.1);
    CHECK(map.cp_product[0] < 0.4);
}
