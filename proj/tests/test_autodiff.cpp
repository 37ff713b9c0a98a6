#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "qdisc/tape.hpp"

using namespace qdisc;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using Id = Tape::Id;

namespace {

// central finite differences with step 1e-5 against the tape gradient
// scalar loss: sum(projection * op_output)
double check_op(const std::function<Id(Tape&, const std::vector<Id>&)>& build,
                const std::vector<Shape>& input_shapes, std::uint64_t seed,
                double input_scale = 1.0, double input_shift = 0.0) {
    rng::Engine eng(seed);
    std::vector<Tensor> inputs;
    for (const auto& s : input_shapes) {
        Tensor t = Tensor::randn(s, eng, input_scale);
        for (auto& v : t.data) v += input_shift;
        inputs.push_back(std::move(t));
    }
    Tensor projection;
    {
        Tape t;
        std::vector<Id> ids;
        for (const auto& in : inputs) ids.push_back(t.leaf(in, false));
        Id out = build(t, ids);
        projection = Tensor::randn(t.val(out).shape, eng);
    }
    auto value = [&](const std::vector<Tensor>& xs) {
        Tape t;
        std::vector<Id> ids;
        for (const auto& in : xs) ids.push_back(t.leaf(in, false));
        Id out = build(t, ids);
        const auto& ov = t.val(out);
        double acc = 0;
        for (std::size_t i = 0; i < ov.data.size(); ++i) acc += ov.data[i] * projection.data[i];
        return acc;
    };
    // analytic
    Tape t;
    std::vector<Id> ids;
    for (const auto& in : inputs) ids.push_back(t.leaf(in, true));
    Id out = build(t, ids);
    Id loss = sum_all(t, mul(t, out, t.leaf(projection, false)));
    t.backward(loss);

    const double h = 1e-5;
    double max_rel = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& g = t.grad(ids[k]);
        auto pert = inputs;
        for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
            pert[k].data[i] = inputs[k].data[i] + h;
            const double fp = value(pert);
            pert[k].data[i] = inputs[k].data[i] - h;
            const double fm = value(pert);
            pert[k].data[i] = inputs[k].data[i];
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = g.data[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max(1e-6, std::abs(analytic) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace

TEST_CASE("forward op examples") {
    Tape t;
    // softmax([0,0,0]) is uniform
    Id x = t.leaf(Tensor({3}, {0, 0, 0}), false);
    const Tensor sm = t.val(softmax_last(t, x));
    for (double v : sm.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

    // matmul(I3, A) = A
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    rng::Engine eng(7);
    Tensor a = Tensor::randn({3, 3}, eng);
    Id prod = matmul(t, t.leaf(eye, false), t.leaf(a, false));
    for (std::size_t i = 0; i < 9; ++i) CHECK(t.val(prod).data[i] == doctest::Approx(a.data[i]));

    // layer_norm pre-affine rows have mean 0, variance 1
    Tensor xr = Tensor::randn({4, 8}, eng, 2.0);
    Id gain = t.leaf(Tensor::full({8}, 1.0), false);
    Id bias = t.leaf(Tensor::zeros({8}), false);
    const auto& ln = t.val(layer_norm(t, t.leaf(xr, false), gain, bias, 1e-12));
    for (int r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < 8; ++c) m += ln.at({r, c});
        m /= 8;
        for (int c = 0; c < 8; ++c) v += (ln.at({r, c}) - m) * (ln.at({r, c}) - m);
        v /= 8;
        CHECK(std::abs(m) < 1e-10);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("shape errors name the op and the shapes") {
    Tape t;
    Id a = t.leaf(Tensor::zeros({2, 3}), false);
    Id b = t.leaf(Tensor::zeros({4, 5}), false);
    CHECK_THROWS_WITH_AS(add(t, a, b), doctest::Contains("add"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(t, a, b), doctest::Contains("(2,3)"), ShapeError);
}

TEST_CASE("d(sum(x))/dx is all ones; d(x*y)/dx = y") {
    Tape t;
    Id x = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    Id s = sum_all(t, x);
    t.backward(s);
    for (double g : t.grad(x).data) CHECK(g == 1.0);

    Tape t2;
    Id a = t2.leaf(Tensor::scalar(2.0), true);
    Id b = t2.leaf(Tensor::scalar(3.0), true);
    Id p = mul(t2, a, b);
    t2.backward(p);
    CHECK(t2.grad(a).data[0] == 3.0);
    CHECK(t2.grad(b).data[0] == 2.0);
}

TEST_CASE("non-scalar loss is rejected") {
    Tape t;
    Id x = t.leaf(Tensor::zeros({3}), true);
    CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("gradients match central finite differences over random tensors") {
    // at least 100 random tensors across the op set; rel err <= 1e-4
    int checks = 0;
    auto expect = [&](double rel) {
        CHECK(rel <= 1e-4);
        ++checks;
    };
    for (std::uint64_t s = 0; s < 5; ++s) {
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return add(t, in[0], in[1]); },
                        {{3, 4}, {3, 4}}, 100 + s));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return sub(t, in[0], in[1]); },
                        {{2, 5}, {2, 5}}, 110 + s));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return mul(t, in[0], in[1]); },
                        {{4, 3}, {4, 3}}, 120 + s));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return div(t, in[0], in[1]); },
                        {{3, 3}, {3, 3}}, 130 + s, 0.5, 2.0));  // keep denominators away from 0
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return add(t, in[0], in[1]); },
                        {{2, 3, 4}, {4}}, 140 + s));  // broadcast bias
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return mul(t, in[0], in[1]); },
                        {{2, 3, 4}, {3, 4}}, 150 + s));  // trailing broadcast
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return matmul(t, in[0], in[1]); },
                        {{4, 6}, {6, 3}}, 160 + s));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return matmul(t, in[0], in[1]); },
                        {{2, 3, 4, 5}, {2, 3, 5, 2}}, 170 + s));  // batched
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return exp_(t, in[0]); },
                        {{3, 3}}, 180 + s, 0.5));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return log_(t, in[0]); },
                        {{3, 3}}, 190 + s, 0.2, 2.0));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return tanh_(t, in[0]); },
                        {{4, 4}}, 200 + s));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return sigmoid(t, in[0]); },
                        {{4, 4}}, 210 + s));
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return selu(t, in[0]); },
                        {{5, 3}}, 220 + s, 1.0, 0.3));  // shift away from the kink at 0
        expect(check_op([](Tape& t, const std::vector<Id>& in) { return square(t, in[0]); },
                        {{3, 5}}, 230 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return softmax_last(t, in[0]); },
            {{3, 6}}, 240 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return log_softmax_last(t, in[0]); },
            {{3, 6}}, 250 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return causal_softmax(t, in[0]); },
            {{2, 5, 5}}, 260 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) {
                return layer_norm(t, in[0], in[1], in[2]);
            },
            {{3, 7}, {7}, {7}}, 270 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) {
                return concat(t, {in[0], in[1]}, 1);
            },
            {{2, 3}, {2, 4}}, 280 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return gather_axis(t, in[0], 1, {0, 2}); },
            {{3, 4, 2}}, 290 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return sum_axis(t, in[0], 1); },
            {{3, 4, 2}}, 300 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return mean_axis(t, in[0], 0); },
            {{4, 3}}, 310 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return permute(t, in[0], {2, 0, 1}); },
            {{2, 3, 4}}, 320 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) { return transpose_last2(t, in[0]); },
            {{3, 4}}, 330 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) {
                return conv2d_circular(t, in[0], in[1], in[2]);
            },
            {{2, 3, 3, 2}, {3, 3, 2, 4}, {4}}, 340 + s));
        expect(check_op(
            [](Tape& t, const std::vector<Id>& in) {
                // composite: mean(relu(a @ b) + c)
                return mean_all(t, add(t, relu(t, matmul(t, in[0], in[1])), in[2]));
            },
            {{3, 4}, {4, 5}, {3, 5}}, 350 + s, 1.0, 0.2));
    }
    CHECK(checks >= 100);
}

TEST_CASE("causal softmax: exact zero gradient to future positions") {
    Tape t;
    rng::Engine eng(99);
    Tensor scores = Tensor::randn({1, 4, 4}, eng);
    Id x = t.leaf(scores, true);
    Id p = causal_softmax(t, x);
    // loss touches only row i = 1
    Tensor proj = Tensor::zeros({1, 4, 4});
    proj.at({0, 1, 0}) = 1.0;
    proj.at({0, 1, 1}) = 2.0;
    Id loss = sum_all(t, mul(t, p, t.leaf(proj, false)));
    t.backward(loss);
    const auto& g = t.grad(x);
    // gradients to columns j > 1 of row 1 are exactly zero, as are other rows
    CHECK(g.at({0, 1, 2}) == 0.0);
    CHECK(g.at({0, 1, 3}) == 0.0);
    CHECK(g.at({0, 0, 1}) == 0.0);
    CHECK(g.at({0, 2, 0}) == 0.0);
    // and the future output entries are exactly zero
    CHECK(t.val(p).at({0, 1, 2}) == 0.0);
    CHECK(t.val(p).at({0, 1, 3}) == 0.0);
}

TEST_CASE("softmax rows sum to one within 1e-12; log-softmax logsumexp is zero") {
    Tape t;
    rng::Engine eng(3);
    Tensor x = Tensor::randn({20, 9}, eng, 3.0);
    const Tensor p = t.val(softmax_last(t, t.leaf(x, false)));
    const Tensor lp = t.val(log_softmax_last(t, t.leaf(x, false)));
    for (int r = 0; r < 20; ++r) {
        double s = 0, lse = 0;
        for (int c = 0; c < 9; ++c) {
            s += p.at({r, c});
            lse += std::exp(lp.at({r, c}));
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
        CHECK(std::abs(std::log(lse)) < 1e-10);
    }
}

TEST_CASE("embedding gathers rows and scatters gradients") {
    Tape t;
    Tensor table({3, 2}, {10, 11, 20, 21, 30, 31});
    Tensor idx({4}, {2, 0, 2, 1});
    Id tab = t.leaf(table, true);
    Id emb = embedding(t, tab, idx);
    CHECK(t.val(emb).at({0, 0}) == 30);
    CHECK(t.val(emb).at({3, 1}) == 21);
    Id loss = sum_all(t, emb);
    t.backward(loss);
    CHECK(t.grad(tab).at({2, 0}) == 2.0);  // row 2 used twice
    CHECK(t.grad(tab).at({1, 1}) == 1.0);
}

TEST_CASE("deterministic forward/backward across repeated runs") {
    auto run = [] {
        Tape t;
        rng::Engine eng(42);
        Id a = t.leaf(Tensor::randn({8, 8}, eng), true);
        Id b = t.leaf(Tensor::randn({8, 8}, eng), true);
        Id loss = mean_all(t, square(t, tanh_(t, matmul(t, a, b))));
        t.backward(loss);
        return std::make_pair(t.val(loss).item(), t.grad(a).data);
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}
