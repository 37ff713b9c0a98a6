#include "qdisc/symreg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "qdisc/optim.hpp"

namespace qdisc::sr {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// ansatz
// ---------------------------------------------------------------------------

int TwoBodyAnsatz::pair_index(int n, int i, int j) {
    if (i > j) std::swap(i, j);
    // pairs (0,1), (0,2), ..., (0,n-1), (1,2), ...
    return i * n - i * (i + 1) / 2 + (j - i - 1);
}

std::pair<int, int> TwoBodyAnsatz::pair_sites(int n, int k) {
    for (int i = 0; i < n - 1; ++i) {
        const int row = n - 1 - i;
        if (k < row) return {i, i + 1 + k};
        k -= row;
    }
    throw ConfigError("pair_sites: index out of range");
}

double TwoBodyAnsatz::evaluate(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != n)
        throw ShapeError("ansatz: input length " + std::to_string(x.size()) + " expected " +
                         std::to_string(n));
    double f = use_constant ? constant : 0.0;
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j, ++k)
            f += alpha[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(i)] *
                 x[static_cast<std::size_t>(j)];
    return f;
}

std::vector<double> TwoBodyAnsatz::gradient_x(const std::vector<double>& x) const {
    std::vector<double> g(x.size(), 0.0);
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j, ++k) {
            g[static_cast<std::size_t>(i)] +=
                alpha[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(j)];
            g[static_cast<std::size_t>(j)] +=
                alpha[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(i)];
        }
    return g;
}

std::vector<double> sr_input(data::Kind kind, const qsim::Snapshot& snap) {
    std::vector<double> x(snap.size());
    switch (kind) {
        case data::Kind::ZBasis:
            for (std::size_t i = 0; i < snap.size(); ++i) x[i] = 1.0 - 2.0 * snap[i];
            break;
        case data::Kind::FkmHybrid:
            for (std::size_t i = 0; i < snap.size(); ++i) x[i] = snap[i];
            break;
        case data::Kind::Shadows:
            throw ConfigError("sr_input: shadow records are not direct SR inputs; use a "
                              "fixed-basis dataset");
    }
    return x;
}

// ---------------------------------------------------------------------------
// cluster selection
// ---------------------------------------------------------------------------

LabeledSet select_cluster(const vae::LatentMap& map, const data::Dataset& dataset, int neuron,
                          const ClusterPredicate& pred, int margin, const GridRegion& scope,
                          const std::optional<GridRegion>& negative_region,
                          int max_samples_per_point) {
    if (neuron < 0 || neuron >= map.latent_dim) throw ConfigError("select_cluster: neuron index");
    const std::size_t R = map.rows, C = map.cols;
    // -1 out of scope, 0 negative, 1 positive
    std::vector<int> cls(R * C, -1);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            if (!scope.contains(r, c)) continue;
            const std::size_t p = r * C + c;
            const double v = pred.stat == ClusterPredicate::Stat::MeanAbsMu
                                 ? map.mean_abs_mu[p][static_cast<std::size_t>(neuron)]
                                 : map.mean_mu[p][static_cast<std::size_t>(neuron)];
            const bool pos = pred.pass(v);
            if (pos)
                cls[p] = 1;
            else if (!negative_region || negative_region->contains(r, c))
                cls[p] = 0;
        }
    // margin: drop points too close to the opposite class
    LabeledSet out;
    const long m = margin;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t p = r * C + c;
            if (cls[p] < 0) continue;
            bool excluded = false;
            if (m > 0) {
                for (long dr = -m; dr <= m && !excluded; ++dr)
                    for (long dc = -m; dc <= m && !excluded; ++dc) {
                        const long rr = static_cast<long>(r) + dr;
                        const long cc = static_cast<long>(c) + dc;
                        if (rr < 0 || cc < 0 || rr >= static_cast<long>(R) ||
                            cc >= static_cast<long>(C))
                            continue;
                        const int other = cls[static_cast<std::size_t>(rr) * C +
                                              static_cast<std::size_t>(cc)];
                        if (other >= 0 && other != cls[p]) excluded = true;
                    }
            }
            if (excluded) continue;
            const auto& snaps = dataset.records[p];
            const std::size_t take =
                max_samples_per_point > 0
                    ? std::min<std::size_t>(snaps.size(), static_cast<std::size_t>(max_samples_per_point))
                    : snaps.size();
            for (std::size_t s = 0; s < take; ++s) {
                auto x = sr_input(dataset.kind, snaps[s]);
                if (cls[p] == 1) {
                    out.x_pos.push_back(std::move(x));
                    out.point_pos.push_back(p);
                } else {
                    out.x_neg.push_back(std::move(x));
                    out.point_neg.push_back(p);
                }
            }
        }
    if (out.x_pos.empty()) throw ConfigError("select_cluster: empty positive class");
    if (out.x_neg.empty()) throw ConfigError("select_cluster: empty negative class");
    return out;
}

// ---------------------------------------------------------------------------
// SR1
// ---------------------------------------------------------------------------

namespace {

struct Sr1Problem {
    std::vector<double> features;  // (M, P [+1]) row-major
    std::vector<double> labels;
    std::size_t samples = 0;
    int p_alpha = 0;
    bool use_constant = false;

    int dim() const { return p_alpha + (use_constant ? 1 : 0); }

    double objective(const std::vector<double>& w, std::vector<double>& grad, double l1) const {
        const int D = dim();
        grad.assign(static_cast<std::size_t>(D), 0.0);
        double loss = 0;
        for (std::size_t m = 0; m < samples; ++m) {
            const double* row = features.data() + m * static_cast<std::size_t>(D);
            double f = 0;
            for (int d = 0; d < D; ++d) f += row[d] * w[static_cast<std::size_t>(d)];
            const double y = labels[m];
            loss += softplus(f) - y * f;
            const double r = sigmoid(f) - y;
            for (int d = 0; d < D; ++d) grad[static_cast<std::size_t>(d)] += r * row[d];
        }
        const double inv = 1.0 / static_cast<double>(samples);
        loss *= inv;
        for (auto& g : grad) g *= inv;
        if (l1 > 0) {
            for (int d = 0; d < p_alpha; ++d) {
                loss += l1 * std::abs(w[static_cast<std::size_t>(d)]);
                grad[static_cast<std::size_t>(d)] +=
                    l1 * (w[static_cast<std::size_t>(d)] > 0   ? 1.0
                          : w[static_cast<std::size_t>(d)] < 0 ? -1.0
                                                               : 0.0);
            }
        }
        return loss;
    }
};

Sr1Problem build_sr1_problem(const LabeledSet& data, bool use_constant) {
    if (data.x_pos.empty() || data.x_neg.empty())
        throw ConfigError("sr1_fit: both classes must be non-empty");
    const int n = static_cast<int>(data.x_pos[0].size());
    const int P = TwoBodyAnsatz::pair_count(n);
    Sr1Problem prob;
    prob.p_alpha = P;
    prob.use_constant = use_constant;
    prob.samples = data.x_pos.size() + data.x_neg.size();
    const int D = prob.dim();
    prob.features.resize(prob.samples * static_cast<std::size_t>(D));
    prob.labels.resize(prob.samples);
    std::size_t m = 0;
    auto fill = [&](const std::vector<std::vector<double>>& xs, double label) {
        for (const auto& x : xs) {
            double* row = prob.features.data() + m * static_cast<std::size_t>(D);
            int k = 0;
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j, ++k)
                    row[k] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
            if (use_constant) row[P] = 1.0;
            prob.labels[m] = label;
            ++m;
        }
    };
    fill(data.x_pos, 1.0);
    fill(data.x_neg, 0.0);
    return prob;
}

}  // namespace

double bce_loss(const TwoBodyAnsatz& f, const LabeledSet& data) {
    double loss = 0;
    std::size_t m = 0;
    for (const auto& x : data.x_pos) {
        loss += softplus(f.evaluate(x)) - f.evaluate(x);
        ++m;
    }
    for (const auto& x : data.x_neg) {
        loss += softplus(f.evaluate(x));
        ++m;
    }
    return loss / static_cast<double>(m);
}

TwoBodyAnsatz sr1_fit(const LabeledSet& data, const Sr1Options& opts) {
    const auto prob = build_sr1_problem(data, opts.use_constant);
    const int n = static_cast<int>(data.x_pos[0].size());
    const int D = prob.dim();

    optim::LbfgsOptions lopts;
    lopts.max_iterations = 400;
    lopts.gradient_tolerance = 1e-8;

    std::vector<double> best_w;
    double best_loss = 1e300;
    bool best_converged = false;
    for (int r = 0; r <= opts.restarts; ++r) {
        std::vector<double> w0(static_cast<std::size_t>(D), 0.0);
        if (r > 0) {
            rng::Engine eng(rng::derive(opts.seed, static_cast<std::uint64_t>(r)));
            for (auto& v : w0) v = 0.1 * eng.normal();
        }
        auto res = optim::lbfgs_minimize(
            [&](const std::vector<double>& w, std::vector<double>& g) {
                return prob.objective(w, g, opts.l1_weight);
            },
            std::move(w0), lopts);
        if (res.fx < best_loss) {
            best_loss = res.fx;
            best_w = res.x;
            best_converged = res.converged;
        }
    }
    TwoBodyAnsatz f;
    f.n = n;
    f.alpha.assign(best_w.begin(), best_w.begin() + prob.p_alpha);
    f.use_constant = opts.use_constant;
    f.constant = opts.use_constant ? best_w[static_cast<std::size_t>(prob.p_alpha)] : 0.0;
    f.converged = best_converged;
    return f;
}

// ---------------------------------------------------------------------------
// gradient-alignment core (SR2 / SR3)
// ---------------------------------------------------------------------------

namespace {

struct AlignmentSample {
    std::vector<double> basis;   // (D x P) row-major: u = B alpha
    std::vector<double> target;  // unit vector, length D
    int d = 0;
};

// minimize mean over samples of || u/||u|| - t ||^2
TwoBodyAnsatz aligned_fit(int n_inputs, const std::vector<AlignmentSample>& samples,
                          std::uint64_t seed) {
    if (samples.empty()) throw ConfigError("gradient alignment: no usable samples");
    const int P = TwoBodyAnsatz::pair_count(n_inputs);
    auto objective = [&](const std::vector<double>& w, std::vector<double>& grad) {
        grad.assign(static_cast<std::size_t>(P), 0.0);
        double loss = 0;
        std::size_t used = 0;
        std::vector<double> u, du;
        for (const auto& s : samples) {
            const int D = s.d;
            u.assign(static_cast<std::size_t>(D), 0.0);
            for (int d = 0; d < D; ++d) {
                const double* row = s.basis.data() + static_cast<std::size_t>(d) * P;
                double acc = 0;
                for (int p = 0; p < P; ++p) acc += row[p] * w[static_cast<std::size_t>(p)];
                u[static_cast<std::size_t>(d)] = acc;
            }
            double nu = 0;
            for (double v : u) nu += v * v;
            nu = std::sqrt(nu);
            if (nu < 1e-9) continue;
            ++used;
            double dot_ut = 0;
            for (int d = 0; d < D; ++d)
                dot_ut += u[static_cast<std::size_t>(d)] / nu * s.target[static_cast<std::size_t>(d)];
            loss += 2.0 - 2.0 * dot_ut;
            // d loss / du = (-2/nu) (t - (t . u_hat) u_hat)
            du.assign(static_cast<std::size_t>(D), 0.0);
            for (int d = 0; d < D; ++d) {
                const double uh = u[static_cast<std::size_t>(d)] / nu;
                du[static_cast<std::size_t>(d)] =
                    (-2.0 / nu) * (s.target[static_cast<std::size_t>(d)] - dot_ut * uh);
            }
            for (int d = 0; d < D; ++d) {
                const double* row = s.basis.data() + static_cast<std::size_t>(d) * P;
                const double dv = du[static_cast<std::size_t>(d)];
                for (int p = 0; p < P; ++p) grad[static_cast<std::size_t>(p)] += dv * row[p];
            }
        }
        if (used == 0) {
            // keep the optimizer moving away from the degenerate origin
            for (int p = 0; p < P; ++p) grad[static_cast<std::size_t>(p)] = 0.0;
            return 4.0;
        }
        const double inv = 1.0 / static_cast<double>(used);
        loss *= inv;
        for (auto& g : grad) g *= inv;
        return loss;
    };

    optim::LbfgsOptions lopts;
    lopts.max_iterations = 300;
    lopts.gradient_tolerance = 1e-9;
    std::vector<double> best_w;
    double best_loss = 1e300;
    bool best_converged = false;
    for (int r = 0; r < 10; ++r) {
        rng::Engine eng(rng::derive(seed, 77 + static_cast<std::uint64_t>(r)));
        std::vector<double> w0(static_cast<std::size_t>(P));
        for (auto& v : w0) v = 0.3 * eng.normal();
        auto res = optim::lbfgs_minimize(objective, std::move(w0), lopts);
        if (res.fx < best_loss) {
            best_loss = res.fx;
            best_w = res.x;
            best_converged = res.converged;
        }
    }
    TwoBodyAnsatz f;
    f.n = n_inputs;
    f.alpha = best_w;
    f.converged = best_converged;
    // normalize the overall scale (alignment is scale-free)
    double mx = 0;
    for (double a : f.alpha) mx = std::max(mx, std::abs(a));
    if (mx > 0)
        for (auto& a : f.alpha) a /= mx;
    return f;
}

// S(x): rows i, columns pair(i,j) hold x_j
void ansatz_jacobian(const std::vector<double>& x, std::vector<double>& S) {
    const int n = static_cast<int>(x.size());
    const int P = TwoBodyAnsatz::pair_count(n);
    S.assign(static_cast<std::size_t>(n) * P, 0.0);
    int k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j, ++k) {
            S[static_cast<std::size_t>(i) * P + k] = x[static_cast<std::size_t>(j)];
            S[static_cast<std::size_t>(j) * P + k] = x[static_cast<std::size_t>(i)];
        }
}

}  // namespace

TwoBodyAnsatz sr2_fit(const std::vector<qsim::Snapshot>& boundary_samples,
                      const vae::VaeModel& model, int active_neuron, std::uint64_t seed) {
    if (boundary_samples.empty()) throw ConfigError("sr2_fit: no boundary samples");
    std::vector<AlignmentSample> samples;
    const int n = static_cast<int>(boundary_samples[0].size());
    std::size_t skipped = 0;
    for (const auto& snap : boundary_samples) {
        auto g = model.encoder_input_gradient(snap, active_neuron);
        double nn2 = 0;
        for (double v : g) nn2 += v * v;
        if (std::sqrt(nn2) < 1e-12) {
            ++skipped;
            continue;
        }
        for (auto& v : g) v /= std::sqrt(nn2);
        AlignmentSample s;
        s.d = n;
        s.target = std::move(g);
        auto x = sr_input(data::Kind::ZBasis, snap);
        ansatz_jacobian(x, s.basis);
        samples.push_back(std::move(s));
    }
    if (samples.empty())
        throw ConfigError("sr2_fit: all " + std::to_string(skipped) +
                          " samples had zero encoder gradient");
    return aligned_fit(n, samples, seed);
}

// ---------------------------------------------------------------------------
// surrogate
// ---------------------------------------------------------------------------

SurrogateModel::SurrogateModel(int in_dim, int hidden, std::uint64_t seed)
    : in_dim_(in_dim), hidden_(hidden) {
    rng::Engine eng(rng::derive(seed, 0x5a5a));
    nn::Dense(params_, eng, "g.l1", in_dim, hidden);
    nn::Dense(params_, eng, "g.l2", hidden, hidden);
    nn::Dense(params_, eng, "g.out", hidden, 1);
}

namespace {

ad::Tape::Id surrogate_graph(const SurrogateModel& m, ad::Tape& t, const nn::Bound& bd,
                             ad::Tape::Id x, int hidden) {
    nn::Dense l1{}, l2{}, out{};
    l1.w = "g.l1.w";
    l1.b = "g.l1.b";
    l1.in = m.input_dim();
    l1.out = hidden;
    l2.w = "g.l2.w";
    l2.b = "g.l2.b";
    l2.in = hidden;
    l2.out = hidden;
    out.w = "g.out.w";
    out.b = "g.out.b";
    out.in = hidden;
    out.out = 1;
    ad::Tape::Id h = tanh_(t, l1.apply(t, bd, x));
    h = tanh_(t, l2.apply(t, bd, h));
    return out.apply(t, bd, h);
}

}  // namespace

double SurrogateModel::predict(const std::vector<double>& theta) const {
    ad::Tape t;
    auto bd = nn::bind(params_, t, false);
    ad::Tape::Id x = t.leaf(ad::Tensor({1, in_dim_}, theta), false);
    return t.val(surrogate_graph(*this, t, bd, x, hidden_)).data[0];
}

std::vector<double> SurrogateModel::gradient(const std::vector<double>& theta) const {
    ad::Tape t;
    auto bd = nn::bind(params_, t, false);
    ad::Tape::Id x = t.leaf(ad::Tensor({1, in_dim_}, theta), true);
    ad::Tape::Id y = sum_all(t, surrogate_graph(*this, t, bd, x, hidden_));
    t.backward(y);
    return t.grad(x).data;
}

SurrogateModel surrogate_train(const std::vector<std::vector<double>>& thetas,
                               const std::vector<double>& targets, std::uint64_t seed, int hidden) {
    if (thetas.size() < 50) throw ConfigError("surrogate_train: need at least 50 grid points");
    if (thetas.size() != targets.size()) throw ConfigError("surrogate_train: size mismatch");
    const int in_dim = static_cast<int>(thetas[0].size());
    SurrogateModel model(in_dim, hidden, seed);

    // normalize inputs/targets for conditioning; fold back into first layer
    // is unnecessary since prediction path applies the same transform? keep
    // raw: theta grids here are O(1) ranges already.
    std::vector<std::size_t> train_idx, hold_idx;
    for (std::size_t i = 0; i < thetas.size(); ++i)
        (i % 10 == 9 ? hold_idx : train_idx).push_back(i);

    auto pack = [&](const std::vector<std::size_t>& idx, ad::Tensor& X, ad::Tensor& Y) {
        X = ad::Tensor::zeros({static_cast<std::int64_t>(idx.size()), in_dim});
        Y = ad::Tensor::zeros({static_cast<std::int64_t>(idx.size()), 1});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (int c = 0; c < in_dim; ++c)
                X.data[r * static_cast<std::size_t>(in_dim) + static_cast<std::size_t>(c)] =
                    thetas[idx[r]][static_cast<std::size_t>(c)];
            Y.data[r] = targets[idx[r]];
        }
    };
    ad::Tensor Xtr, Ytr, Xho, Yho;
    pack(train_idx, Xtr, Ytr);
    pack(hold_idx, Xho, Yho);

    const std::size_t nparams = static_cast<std::size_t>(model.params().total_size());
    auto get_flat = [&]() {
        std::vector<double> w;
        w.reserve(nparams);
        for (std::size_t i = 0; i < model.params().count(); ++i)
            for (double v : model.params().tensor(i).data) w.push_back(v);
        return w;
    };
    auto set_flat = [&](const std::vector<double>& w) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < model.params().count(); ++i)
            for (auto& v : model.params().tensor(i).data) v = w[off++];
    };

    auto objective = [&](const std::vector<double>& w, std::vector<double>& grad) {
        set_flat(w);
        ad::Tape t;
        auto bd = nn::bind(model.params(), t, true);
        ad::Tape::Id x = t.leaf(Xtr, false);
        ad::Tape::Id pred = surrogate_graph(model, t, bd, x, hidden);
        ad::Tape::Id diff = sub(t, pred, t.leaf(Ytr, false));
        ad::Tape::Id loss = mean_all(t, square(t, diff));
        t.backward(loss);
        grad.clear();
        grad.reserve(nparams);
        for (std::size_t i = 0; i < model.params().count(); ++i)
            for (double v : t.grad(bd.ids[i]).data) grad.push_back(v);
        return t.val(loss).item();
    };
    optim::LbfgsOptions lopts;
    lopts.max_iterations = 500;
    lopts.gradient_tolerance = 1e-10;
    auto res = optim::lbfgs_minimize(objective, get_flat(), lopts);
    set_flat(res.x);

    // held-out R^2
    const auto eval_r2 = [&](const ad::Tensor& X, const ad::Tensor& Y) {
        ad::Tape t;
        auto bd = nn::bind(model.params(), t, false);
        ad::Tape::Id pred = surrogate_graph(model, t, bd, t.leaf(X, false), hidden);
        const auto& pv = t.val(pred).data;
        double mean = 0;
        for (double v : Y.data) mean += v;
        mean /= static_cast<double>(Y.data.size());
        double ss_res = 0, ss_tot = 0;
        for (std::size_t i = 0; i < Y.data.size(); ++i) {
            ss_res += (Y.data[i] - pv[i]) * (Y.data[i] - pv[i]);
            ss_tot += (Y.data[i] - mean) * (Y.data[i] - mean);
        }
        if (ss_tot < 1e-300) return std::make_pair(1.0, false);
        return std::make_pair(1.0 - ss_res / ss_tot, true);
    };
    auto [r2, well_posed] = eval_r2(Xho.data.empty() ? Xtr : Xho, Yho.data.empty() ? Ytr : Yho);
    model.holdout_r2 = r2;
    model.reliable = well_posed && r2 >= 0.95;
    return model;
}

// ---------------------------------------------------------------------------
// projectors
// ---------------------------------------------------------------------------

std::vector<std::vector<double>> projector_fd(const std::vector<double>& x_i,
                                              const std::vector<double>& x_f,
                                              const std::vector<double>& theta_i,
                                              const std::vector<double>& theta_f) {
    if (x_i.size() != x_f.size()) throw ShapeError("projector_fd: snapshot size mismatch");
    if (theta_i.size() != theta_f.size()) throw ShapeError("projector_fd: theta size mismatch");
    std::vector<std::vector<double>> v(theta_i.size(), std::vector<double>(x_i.size(), 0.0));
    for (std::size_t k = 0; k < theta_i.size(); ++k) {
        const double dth = theta_f[k] - theta_i[k];
        if (dth == 0.0)
            throw NumericError("projector_fd: zero denominator on axis " + std::to_string(k));
        for (std::size_t i = 0; i < x_i.size(); ++i) v[k][i] = (x_f[i] - x_i[i]) / dth;
    }
    return v;
}

std::vector<std::vector<double>> projector_cp(
    const vae::VaeModel& model, const std::vector<std::pair<int, const SurrogateModel*>>& active,
    const std::vector<double>& theta) {
    const int Z = model.config().latent_dim;
    const int I = model.config().input_length;
    std::vector<double> z0(static_cast<std::size_t>(Z), 0.0);
    for (const auto& [neuron, surrogate] : active)
        z0[static_cast<std::size_t>(neuron)] = surrogate->predict(theta);
    const double h = 1e-3;
    std::vector<std::vector<double>> v(theta.size(), std::vector<double>(static_cast<std::size_t>(I), 0.0));
    for (const auto& [neuron, surrogate] : active) {
        auto zp = z0, zm = z0;
        zp[static_cast<std::size_t>(neuron)] += h;
        zm[static_cast<std::size_t>(neuron)] -= h;
        const auto cp_p = model.conditional_probability_map({zp})[0];
        const auto cp_m = model.conditional_probability_map({zm})[0];
        const auto dg = surrogate->gradient(theta);
        for (std::size_t k = 0; k < theta.size(); ++k)
            for (int i = 0; i < I; ++i)
                v[k][static_cast<std::size_t>(i)] += (cp_p[static_cast<std::size_t>(i)] -
                                                      cp_m[static_cast<std::size_t>(i)]) /
                                                     (2.0 * h) * dg[k];
    }
    return v;
}

TwoBodyAnsatz sr3_fit(const std::vector<Sr3Sample>& samples, int n_inputs, std::uint64_t seed) {
    if (samples.empty()) throw ConfigError("sr3_fit: no boundary samples");
    const int P = TwoBodyAnsatz::pair_count(n_inputs);
    std::vector<AlignmentSample> aligned;
    std::vector<double> S;
    for (const auto& s : samples) {
        const auto K = s.v.size();
        if (K != s.surrogate_gradient.size())
            throw ShapeError("sr3_fit: projector/surrogate gradient rank mismatch");
        double tn = 0;
        for (double g : s.surrogate_gradient) tn += g * g;
        tn = std::sqrt(tn);
        if (tn < 1e-12) continue;
        AlignmentSample a;
        a.d = static_cast<int>(K);
        a.target.resize(K);
        for (std::size_t k = 0; k < K; ++k) a.target[k] = s.surrogate_gradient[k] / tn;
        ansatz_jacobian(s.x_mean, S);  // (n x P)
        a.basis.assign(K * static_cast<std::size_t>(P), 0.0);
        for (std::size_t k = 0; k < K; ++k)
            for (int i = 0; i < n_inputs; ++i) {
                const double vk = s.v[k][static_cast<std::size_t>(i)];
                if (vk == 0.0) continue;
                const double* srow = S.data() + static_cast<std::size_t>(i) * P;
                double* brow = a.basis.data() + k * static_cast<std::size_t>(P);
                for (int p = 0; p < P; ++p) brow[p] += vk * srow[p];
            }
        aligned.push_back(std::move(a));
    }
    if (aligned.empty()) throw ConfigError("sr3_fit: all samples had zero surrogate gradient");
    return aligned_fit(n_inputs, aligned, seed);
}

// ---------------------------------------------------------------------------
// genetic search
// ---------------------------------------------------------------------------

namespace {

bool is_binary(OpKind op) {
    return op == OpKind::Add || op == OpKind::Sub || op == OpKind::Mul || op == OpKind::Div;
}
bool is_unary(OpKind op) {
    return op == OpKind::Sin || op == OpKind::Cos || op == OpKind::Tanh || op == OpKind::Exp ||
           op == OpKind::Log;
}

constexpr double kSentinel = 1e15;

double clamp_value(double v) {
    if (!std::isfinite(v)) return kSentinel;
    return std::clamp(v, -kSentinel, kSentinel);
}

double apply_op(OpKind op, double a, double b) {
    switch (op) {
        case OpKind::Add: return clamp_value(a + b);
        case OpKind::Sub: return clamp_value(a - b);
        case OpKind::Mul: return clamp_value(a * b);
        case OpKind::Div: {
            const double den = std::abs(b) < 1e-12 ? std::copysign(1e-12, b == 0 ? 1.0 : b) : b;
            return clamp_value(a / den);
        }
        case OpKind::Sin: return std::sin(std::clamp(a, -1e9, 1e9));
        case OpKind::Cos: return std::cos(std::clamp(a, -1e9, 1e9));
        case OpKind::Tanh: return std::tanh(a);
        case OpKind::Exp: return clamp_value(std::exp(std::min(a, 700.0)));
        case OpKind::Log: return std::log(std::max(std::abs(a), 1e-12));
        default: return 0;
    }
}

const char* op_symbol(OpKind op) {
    switch (op) {
        case OpKind::Add: return "+";
        case OpKind::Sub: return "-";
        case OpKind::Mul: return "*";
        case OpKind::Div: return "/";
        case OpKind::Sin: return "sin";
        case OpKind::Cos: return "cos";
        case OpKind::Tanh: return "tanh";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        default: return "?";
    }
}

}  // namespace

int ExpressionTree::complexity() const {
    if (root < 0) return 0;
    int count = 0;
    std::vector<int> stack{root};
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        ++count;
        const auto& node = nodes[static_cast<std::size_t>(id)];
        if (node.child0 >= 0) stack.push_back(node.child0);
        if (node.child1 >= 0) stack.push_back(node.child1);
    }
    return count;
}

double ExpressionTree::evaluate(const std::vector<double>& x) const {
    if (root < 0) return 0;
    // iterative post-order with a value cache
    std::vector<double> value(nodes.size(), 0.0);
    std::vector<std::pair<int, bool>> stack{{root, false}};
    while (!stack.empty()) {
        auto [id, ready] = stack.back();
        stack.pop_back();
        const auto& node = nodes[static_cast<std::size_t>(id)];
        if (!ready) {
            stack.push_back({id, true});
            if (node.child0 >= 0) stack.push_back({node.child0, false});
            if (node.child1 >= 0) stack.push_back({node.child1, false});
            continue;
        }
        double v;
        if (node.op == OpKind::Const)
            v = node.value;
        else if (node.op == OpKind::Var)
            v = x[static_cast<std::size_t>(node.var)];
        else if (is_unary(node.op))
            v = apply_op(node.op, value[static_cast<std::size_t>(node.child0)], 0.0);
        else
            v = apply_op(node.op, value[static_cast<std::size_t>(node.child0)],
                         value[static_cast<std::size_t>(node.child1)]);
        value[static_cast<std::size_t>(id)] = v;
    }
    return value[static_cast<std::size_t>(root)];
}

std::string ExpressionTree::to_prefix() const {
    std::ostringstream os;
    std::function<void(int)> emit = [&](int id) {
        const auto& node = nodes[static_cast<std::size_t>(id)];
        if (node.op == OpKind::Const) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6g", node.value);
            os << buf;
        } else if (node.op == OpKind::Var) {
            os << "x" << node.var;
        } else if (is_unary(node.op)) {
            os << "(" << op_symbol(node.op) << " ";
            emit(node.child0);
            os << ")";
        } else {
            os << "(" << op_symbol(node.op) << " ";
            emit(node.child0);
            os << " ";
            emit(node.child1);
            os << ")";
        }
    };
    if (root >= 0) emit(root);
    return os.str();
}

namespace {

struct Genetics {
    const std::vector<std::vector<double>>& X;
    const std::vector<double>& y;
    const GeneticOptions& opts;
    int n_vars;
    rng::Engine eng;

    explicit Genetics(const std::vector<std::vector<double>>& X_, const std::vector<double>& y_,
                      const GeneticOptions& o)
        : X(X_), y(y_), opts(o), n_vars(static_cast<int>(X_[0].size())), eng(o.seed) {}

    int add_node(ExpressionTree& t, ExprNode node) {
        t.nodes.push_back(node);
        return static_cast<int>(t.nodes.size() - 1);
    }

    int random_leaf(ExpressionTree& t) {
        if (eng.uniform() < 0.7) {
            ExprNode n;
            n.op = OpKind::Var;
            n.var = static_cast<int>(eng.below(static_cast<std::uint64_t>(n_vars)));
            return add_node(t, n);
        }
        ExprNode n;
        n.op = OpKind::Const;
        n.value = std::round(eng.normal() * 200.0) / 100.0;  // two-decimal constants
        return add_node(t, n);
    }

    int random_subtree(ExpressionTree& t, int depth) {
        if (depth <= 0 || eng.uniform() < 0.3) return random_leaf(t);
        const OpKind op = opts.operators[eng.below(opts.operators.size())];
        ExprNode n;
        n.op = op;
        if (is_unary(op)) {
            n.child0 = random_subtree(t, depth - 1);
        } else {
            n.child0 = random_subtree(t, depth - 1);
            n.child1 = random_subtree(t, depth - 1);
        }
        return add_node(t, n);
    }

    ExpressionTree random_tree() {
        for (int attempt = 0; attempt < 30; ++attempt) {
            ExpressionTree t;
            t.root = random_subtree(t, 3);
            if (t.complexity() <= opts.complexity_budget) return t;
        }
        ExpressionTree t;
        t.root = random_leaf(t);
        return t;
    }

    double loss(const ExpressionTree& t) const {
        double acc = 0;
        for (std::size_t m = 0; m < X.size(); ++m) {
            const double f = t.evaluate(X[m]);
            if (opts.classification) {
                acc += softplus(f) - y[m] * f;
            } else {
                const double d = f - y[m];
                acc += d * d;
            }
        }
        acc /= static_cast<double>(X.size());
        return std::isfinite(acc) ? acc : 1e30;
    }

    double fitness(const ExpressionTree& t, double l) const {
        return l + opts.parsimony * t.complexity();
    }

    // compact copy of the subtree rooted at `at`
    int copy_subtree(const ExpressionTree& src, int at, ExpressionTree& dst) {
        const auto& node = src.nodes[static_cast<std::size_t>(at)];
        ExprNode copy = node;
        if (node.child0 >= 0) copy.child0 = copy_subtree(src, node.child0, dst);
        if (node.child1 >= 0) copy.child1 = copy_subtree(src, node.child1, dst);
        return add_node(dst, copy);
    }

    std::vector<int> reachable(const ExpressionTree& t) const {
        std::vector<int> out;
        std::vector<int> stack{t.root};
        while (!stack.empty()) {
            const int id = stack.back();
            stack.pop_back();
            out.push_back(id);
            const auto& node = t.nodes[static_cast<std::size_t>(id)];
            if (node.child0 >= 0) stack.push_back(node.child0);
            if (node.child1 >= 0) stack.push_back(node.child1);
        }
        return out;
    }

    ExpressionTree crossover(const ExpressionTree& a, const ExpressionTree& b) {
        for (int attempt = 0; attempt < 10; ++attempt) {
            const auto nodes_a = reachable(a);
            const auto nodes_b = reachable(b);
            const int cut = nodes_a[eng.below(nodes_a.size())];
            const int graft = nodes_b[eng.below(nodes_b.size())];
            // rebuild a with the graft in place of the cut
            ExpressionTree out;
            std::function<int(int)> rebuild = [&](int id) -> int {
                if (id == cut) return copy_subtree(b, graft, out);
                const auto& node = a.nodes[static_cast<std::size_t>(id)];
                ExprNode copy = node;
                if (node.child0 >= 0) copy.child0 = rebuild(node.child0);
                if (node.child1 >= 0) copy.child1 = rebuild(node.child1);
                return add_node(out, copy);
            };
            out.root = rebuild(a.root);
            if (out.complexity() <= opts.complexity_budget) return out;
        }
        return a;
    }

    void mutate(ExpressionTree& t) {
        const auto nodes = reachable(t);
        const int id = nodes[eng.below(nodes.size())];
        // subtree replacement keeps structural diversity alive
        if (eng.uniform() < 0.25) {
            ExpressionTree graft;
            graft.root = random_subtree(graft, 2);
            ExpressionTree out;
            std::function<int(int)> rebuild = [&](int cur) -> int {
                if (cur == id) return copy_subtree(graft, graft.root, out);
                const auto& node = t.nodes[static_cast<std::size_t>(cur)];
                ExprNode copy = node;
                if (node.child0 >= 0) copy.child0 = rebuild(node.child0);
                if (node.child1 >= 0) copy.child1 = rebuild(node.child1);
                return add_node(out, copy);
            };
            out.root = rebuild(t.root);
            if (out.complexity() <= opts.complexity_budget) t = std::move(out);
            return;
        }
        auto& node = t.nodes[static_cast<std::size_t>(id)];
        const double u = eng.uniform();
        if (node.op == OpKind::Const) {
            node.value += 0.3 * eng.normal() * (std::abs(node.value) + 0.5);
        } else if (node.op == OpKind::Var) {
            if (u < 0.5)
                node.var = static_cast<int>(eng.below(static_cast<std::uint64_t>(n_vars)));
            else {
                node.op = OpKind::Const;
                node.value = std::round(eng.normal() * 200.0) / 100.0;
            }
        } else if (is_binary(node.op)) {
            std::vector<OpKind> pool;
            for (auto op : opts.operators)
                if (is_binary(op)) pool.push_back(op);
            node.op = pool[eng.below(pool.size())];
        } else {
            std::vector<OpKind> pool;
            for (auto op : opts.operators)
                if (is_unary(op)) pool.push_back(op);
            if (!pool.empty()) node.op = pool[eng.below(pool.size())];
        }
    }

    void refine_constants(ExpressionTree& t) {
        std::vector<int> const_ids;
        for (int id : reachable(t))
            if (t.nodes[static_cast<std::size_t>(id)].op == OpKind::Const) const_ids.push_back(id);
        if (const_ids.empty()) return;
        auto objective = [&](const std::vector<double>& w, std::vector<double>& grad) {
            for (std::size_t i = 0; i < const_ids.size(); ++i)
                t.nodes[static_cast<std::size_t>(const_ids[i])].value = w[i];
            const double f0 = loss(t);
            grad.assign(w.size(), 0.0);
            const double h = 1e-5;
            for (std::size_t i = 0; i < w.size(); ++i) {
                t.nodes[static_cast<std::size_t>(const_ids[i])].value = w[i] + h;
                const double fp = loss(t);
                t.nodes[static_cast<std::size_t>(const_ids[i])].value = w[i] - h;
                const double fm = loss(t);
                t.nodes[static_cast<std::size_t>(const_ids[i])].value = w[i];
                grad[i] = (fp - fm) / (2.0 * h);
            }
            return f0;
        };
        std::vector<double> w0;
        for (int id : const_ids) w0.push_back(t.nodes[static_cast<std::size_t>(id)].value);
        optim::LbfgsOptions lopts;
        lopts.max_iterations = 30;
        lopts.gradient_tolerance = 1e-10;
        auto res = optim::lbfgs_minimize(objective, std::move(w0), lopts);
        for (std::size_t i = 0; i < const_ids.size(); ++i)
            t.nodes[static_cast<std::size_t>(const_ids[i])].value = res.x[i];
    }
};

}  // namespace

GeneticResult genetic_search(const std::vector<std::vector<double>>& inputs,
                             const std::vector<double>& labels, const GeneticOptions& opts) {
    if (inputs.empty() || inputs.size() != labels.size())
        throw ConfigError("genetic_search: empty or mismatched dataset");
    Genetics gen(inputs, labels, opts);

    std::vector<ExpressionTree> population;
    std::vector<double> losses;
    population.reserve(static_cast<std::size_t>(opts.population));
    for (int i = 0; i < opts.population; ++i) {
        population.push_back(gen.random_tree());
        losses.push_back(gen.loss(population.back()));
    }

    std::map<int, ParetoEntry> front;
    auto update_front = [&](const ExpressionTree& t, double l) {
        const int c = t.complexity();
        auto it = front.find(c);
        if (it == front.end() || l < it->second.loss) front[c] = ParetoEntry{c, l, t};
    };
    for (std::size_t i = 0; i < population.size(); ++i) update_front(population[i], losses[i]);

    auto tournament = [&]() -> std::size_t {
        std::size_t best = gen.eng.below(population.size());
        double best_fit = gen.fitness(population[best], losses[best]);
        for (int k = 1; k < opts.tournament; ++k) {
            const std::size_t c = gen.eng.below(population.size());
            const double f = gen.fitness(population[c], losses[c]);
            if (f < best_fit) {
                best = c;
                best_fit = f;
            }
        }
        return best;
    };

    for (int g = 0; g < opts.generations; ++g) {
        std::vector<ExpressionTree> next;
        std::vector<double> next_losses;
        next.reserve(population.size());
        // elitism: carry the best individual over
        std::size_t best_idx = 0;
        for (std::size_t i = 1; i < population.size(); ++i)
            if (gen.fitness(population[i], losses[i]) < gen.fitness(population[best_idx], losses[best_idx]))
                best_idx = i;
        next.push_back(population[best_idx]);
        next_losses.push_back(losses[best_idx]);
        // fresh immigrants keep exploration alive late in the run
        const std::size_t immigrants = population.size() / 10;
        for (std::size_t i = 0; i < immigrants && next.size() < population.size(); ++i) {
            next.push_back(gen.random_tree());
            next_losses.push_back(gen.loss(next.back()));
        }
        while (next.size() < population.size()) {
            const std::size_t pa = tournament();
            ExpressionTree child;
            if (gen.eng.uniform() < 0.9) {
                const std::size_t pb = tournament();
                child = gen.crossover(population[pa], population[pb]);
            } else {
                child = population[pa];
            }
            if (gen.eng.uniform() < 0.4) gen.mutate(child);
            if (child.complexity() > opts.complexity_budget) child = population[pa];
            next.push_back(std::move(child));
            next_losses.push_back(gen.loss(next.back()));
        }
        population = std::move(next);
        losses = std::move(next_losses);
        for (std::size_t i = 0; i < population.size(); ++i) update_front(population[i], losses[i]);
        // quasi-Newton refinement of the constants of every front member
        for (auto& [c, entry] : front) {
            gen.refine_constants(entry.tree);
            entry.loss = gen.loss(entry.tree);
            update_front(entry.tree, entry.loss);
        }
    }

    GeneticResult res;
    double best_fit = 1e300;
    for (const auto& [c, entry] : front) {
        const double f = entry.loss + opts.parsimony * c;
        if (f < best_fit) {
            best_fit = f;
            res.best = entry.tree;
            res.best_loss = entry.loss;
        }
    }
    // dominated entries dropped: loss must strictly improve with complexity
    double best_loss_so_far = 1e300;
    for (const auto& [c, entry] : front) {
        if (entry.loss < best_loss_so_far - 1e-12) {
            res.pareto.push_back(entry);
            best_loss_so_far = entry.loss;
        }
    }
    return res;
}

CoefficientFit fit_coefficient_function(const TwoBodyAnsatz& ansatz, const GeneticOptions& opts_in) {
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    int k = 0;
    for (int i = 0; i < ansatz.n; ++i)
        for (int j = i + 1; j < ansatz.n; ++j, ++k) {
            X.push_back({static_cast<double>(j - i)});
            y.push_back(ansatz.alpha[static_cast<std::size_t>(k)]);
        }
    GeneticOptions opts = opts_in;
    opts.classification = false;
    if (opts.operators.size() > 4)
        opts.operators = {OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div};
    if (opts.complexity_budget > 13) opts.complexity_budget = 13;
    auto res = genetic_search(X, y, opts);
    CoefficientFit fit;
    fit.g = res.best;
    fit.mse = res.best_loss;
    for (int r = 1; r < ansatz.n; ++r) {
        const double v = fit.g.evaluate({static_cast<double>(r)});
        fit.g_of_r.push_back(v);
        fit.sign_of_r.push_back(v > 0 ? 1 : v < 0 ? -1 : 0);
    }
    return fit;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

double normalize_order_parameter(double value, int n) {
    if (n < 2) throw ConfigError("normalize_order_parameter: N must be >= 2");
    return value / (0.5 * n * (n - 1));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ConfigError("spearman: need two equal-length series of at least 2 points");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0 || db == 0) return 0.0;
    return num / std::sqrt(da * db);
}

double auc(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
    if (scores_in.empty() || scores_out.empty()) throw ConfigError("auc: empty class");
    std::vector<double> all;
    all.reserve(scores_in.size() + scores_out.size());
    for (double v : scores_in) all.push_back(v);
    for (double v : scores_out) all.push_back(v);
    const auto ranks = average_ranks(all);
    double r_in = 0;
    for (std::size_t i = 0; i < scores_in.size(); ++i) r_in += ranks[i];
    const double n_in = static_cast<double>(scores_in.size());
    const double n_out = static_cast<double>(scores_out.size());
    const double u = r_in - n_in * (n_in + 1.0) / 2.0;
    return u / (n_in * n_out);
}

std::vector<RobustnessRow> robustness_protocol(
    const std::vector<std::pair<std::string, LabeledSet>>& shifted_sets, const Sr1Options& base,
    int seeds, const std::function<std::pair<double, double>(const TwoBodyAnsatz&)>& evaluator) {
    std::vector<RobustnessRow> rows;
    for (const auto& [name, set] : shifted_sets) {
        std::vector<double> sp, au;
        for (int s = 0; s < seeds; ++s) {
            Sr1Options opts = base;
            opts.seed = rng::derive(base.seed, static_cast<std::uint64_t>(s) + 31);
            const auto f = sr1_fit(set, opts);
            const auto [spearman_v, auc_v] = evaluator(f);
            sp.push_back(spearman_v);
            au.push_back(auc_v);
        }
        RobustnessRow row;
        row.name = name;
        auto stats = [](const std::vector<double>& v) {
            double m = 0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double s2 = 0;
            for (double x : v) s2 += (x - m) * (x - m);
            s2 = v.size() > 1 ? s2 / static_cast<double>(v.size() - 1) : 0.0;
            return std::make_pair(m, std::sqrt(s2));
        };
        std::tie(row.spearman_mean, row.spearman_std) = stats(sp);
        std::tie(row.auc_mean, row.auc_std) = stats(au);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ansatz_to_prefix(const TwoBodyAnsatz& f) {
    std::ostringstream os;
    int terms = 0;
    std::ostringstream body;
    int k = 0;
    std::vector<std::string> parts;
    for (int i = 0; i < f.n; ++i)
        for (int j = i + 1; j < f.n; ++j, ++k) {
            const double a = f.alpha[static_cast<std::size_t>(k)];
            if (a == 0.0) continue;
            char buf[64];
            std::snprintf(buf, sizeof buf, "(* %.6g (* x%d x%d))", a, i, j);
            parts.emplace_back(buf);
            ++terms;
        }
    if (f.use_constant) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", f.constant);
        parts.emplace_back(buf);
    }
    if (parts.empty()) return "0";
    std::string acc = parts.back();
    for (int i = static_cast<int>(parts.size()) - 2; i >= 0; --i)
        acc = "(+ " + parts[static_cast<std::size_t>(i)] + " " + acc + ")";
    (void)terms;
    (void)os;
    (void)body;
    return acc;
}

std::string export_symbolic_result(const std::string& expression_prefix,
                                   const std::vector<std::pair<std::string, double>>& metrics,
                                   std::uint64_t dataset_hash, std::uint64_t seed) {
    std::ostringstream os;
    os << "expression: " << expression_prefix << "\n";
    os << "metrics:\n";
    for (const auto& [name, value] : metrics) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", value);
        os << "  " << name << ": " << buf << "\n";
    }
    os << "provenance:\n";
    char hb[32];
    std::snprintf(hb, sizeof hb, "%016llx", static_cast<unsigned long long>(dataset_hash));
    os << "  dataset_hash: " << hb << "\n";
    os << "  seed: " << seed << "\n";
    return os.str();
}

}  // namespace qdisc::sr
