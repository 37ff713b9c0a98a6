#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qdisc/nn.hpp"

using namespace qdisc;
using ad::Tape;
using ad::Tensor;
using Id = Tape::Id;

TEST_CASE("param set registration order and lookup") {
    nn::ParamSet ps;
    rng::Engine eng(1);
    ps.create("a", {2, 2}, eng, 1.0);
    ps.create_zeros("b", {3});
    CHECK(ps.count() == 2);
    CHECK(ps.name(0) == "a");
    CHECK(ps.index_of("b") == 1);
    CHECK(ps.total_size() == 7);
    CHECK_THROWS_AS(ps.create_zeros("a", {1}), ConfigError);
    CHECK_THROWS_AS(ps.get("missing"), ConfigError);
}

TEST_CASE("dense layer shapes") {
    nn::ParamSet ps;
    rng::Engine eng(2);
    nn::Dense d(ps, eng, "fc", 4, 3);
    Tape t;
    auto bd = nn::bind(ps, t, false);
    Id x = t.leaf(Tensor::randn({5, 6, 4}, eng), false);
    Id y = d.apply(t, bd, x);
    CHECK(t.val(y).shape == ad::Shape{5, 6, 3});
}

TEST_CASE("causal self attention is causal") {
    nn::ParamSet ps;
    rng::Engine eng(3);
    nn::MultiHeadAttention attn(ps, eng, "a", 8, 2);
    Tensor x = Tensor::randn({1, 6, 8}, eng);

    auto outputs = [&](const Tensor& input) {
        Tape t;
        auto bd = nn::bind(ps, t, false);
        Id xid = t.leaf(input, false);
        Id y = attn.self_attention(t, bd, xid, true);
        return t.val(y);
    };
    const Tensor base = outputs(x);
    // perturb position 4; outputs at positions <= 4... strictly before 4 must not move,
    // position 4 itself sees its own input
    Tensor pert = x;
    for (int c = 0; c < 8; ++c) pert.at({0, 4, c}) += 0.7;
    const Tensor shifted = outputs(pert);
    for (int pos = 0; pos < 4; ++pos)
        for (int c = 0; c < 8; ++c)
            CHECK(base.at({0, pos, c}) == shifted.at({0, pos, c}));
    // and the perturbation does reach position 4
    double diff = 0;
    for (int c = 0; c < 8; ++c) diff += std::abs(base.at({0, 4, c}) - shifted.at({0, 4, c}));
    CHECK(diff > 1e-6);
}

TEST_CASE("cross attention attends over the context") {
    nn::ParamSet ps;
    rng::Engine eng(4);
    nn::MultiHeadAttention attn(ps, eng, "x", 8, 4);
    Tape t;
    auto bd = nn::bind(ps, t, false);
    Id q = t.leaf(Tensor::randn({2, 5, 8}, eng), false);
    Id ctx = t.leaf(Tensor::randn({2, 3, 8}, eng), false);
    Id y = attn.cross_attention(t, bd, q, ctx);
    CHECK(t.val(y).shape == ad::Shape{2, 5, 8});
}

TEST_CASE("positional encoding values") {
    const Tensor pe = nn::positional_encoding(10, 8);
    CHECK(pe.at({0, 0}) == 0.0);           // sin(0)
    CHECK(pe.at({0, 1}) == 1.0);           // cos(0)
    CHECK(pe.at({3, 0}) == doctest::Approx(std::sin(3.0)));
    CHECK(pe.at({3, 1}) == doctest::Approx(std::cos(3.0)));
    CHECK(pe.at({5, 2}) == doctest::Approx(std::sin(5.0 / std::pow(10000.0, 2.0 / 8.0))));
}

TEST_CASE("made masks enforce strict autoregressive structure") {
    const int N = 5, Z = 2;
    const auto masks = nn::made_masks(N, Z, {11, 7}, 2);
    REQUIRE(masks.hidden.size() == 2);
    // conditioning inputs (degree 0) reach every hidden unit
    for (int j = 0; j < 11; ++j)
        for (int c = 0; c < Z; ++c) CHECK(masks.hidden[0].at({c, j}) == 1.0);
    // composite path test: input site k must never reach output site i <= k.
    // connectivity through the masks:
    std::vector<std::vector<double>> reach(static_cast<std::size_t>(Z + N));
    for (int in = 0; in < Z + N; ++in) {
        std::vector<double> cur(static_cast<std::size_t>(Z + N), 0.0);
        cur[static_cast<std::size_t>(in)] = 1.0;
        // layer 1
        std::vector<double> h1(11, 0.0);
        for (int j = 0; j < 11; ++j)
            for (int i = 0; i < Z + N; ++i)
                h1[static_cast<std::size_t>(j)] += cur[static_cast<std::size_t>(i)] *
                                                   masks.hidden[0].at({i, j});
        std::vector<double> h2(7, 0.0);
        for (int j = 0; j < 7; ++j)
            for (int i = 0; i < 11; ++i)
                h2[static_cast<std::size_t>(j)] += h1[static_cast<std::size_t>(i)] *
                                                   masks.hidden[1].at({i, j});
        std::vector<double> out(static_cast<std::size_t>(2 * N), 0.0);
        for (int j = 0; j < 2 * N; ++j)
            for (int i = 0; i < 7; ++i)
                out[static_cast<std::size_t>(j)] += h2[static_cast<std::size_t>(i)] *
                                                    masks.output.at({i, j});
        reach[static_cast<std::size_t>(in)] = out;
    }
    for (int site = 1; site <= N; ++site) {
        const int in_idx = Z + site - 1;
        for (int out_site = 1; out_site <= N; ++out_site)
            for (int c = 0; c < 2; ++c) {
                const double r =
                    reach[static_cast<std::size_t>(in_idx)][static_cast<std::size_t>(
                        (out_site - 1) * 2 + c)];
                if (out_site <= site) CHECK(r == 0.0);  // no forward leakage
            }
        // conditioning reaches every output
        for (int c = 0; c < Z; ++c) {
            double total = 0;
            for (double v : reach[static_cast<std::size_t>(c)]) total += v;
            CHECK(total > 0.0);
        }
    }
}
