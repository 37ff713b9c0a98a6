#include "qdisc/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace qdisc::analysis {

namespace {

std::vector<std::pair<int, int>> nn_bonds(const qsim::Geometry& g) {
    std::vector<std::pair<int, int>> bonds;
    if (g.kind == qsim::Geometry::Kind::Chain) {
        for (int i = 0; i + 1 < g.lx; ++i) bonds.emplace_back(i, i + 1);
        return bonds;
    }
    for (int r = 0; r < g.ly; ++r)
        for (int c = 0; c < g.lx; ++c) {
            const int i = r * g.lx + c;
            if (c + 1 < g.lx) bonds.emplace_back(i, i + 1);
            if (r + 1 < g.ly) bonds.emplace_back(i, i + g.lx);
        }
    return bonds;
}

std::vector<std::pair<int, int>> nnn_bonds(const qsim::Geometry& g) {
    std::vector<std::pair<int, int>> bonds;
    if (g.kind == qsim::Geometry::Kind::Chain) {
        for (int i = 0; i + 2 < g.lx; ++i) bonds.emplace_back(i, i + 2);
        return bonds;
    }
    for (int r = 0; r + 1 < g.ly; ++r)
        for (int c = 0; c < g.lx; ++c) {
            const int i = r * g.lx + c;
            if (c + 1 < g.lx) bonds.emplace_back(i, i + g.lx + 1);
            if (c > 0) bonds.emplace_back(i, i + g.lx - 1);
        }
    return bonds;
}

double bond_correlator(const std::vector<qsim::Snapshot>& snaps,
                       const std::vector<std::pair<int, int>>& bonds) {
    if (snaps.empty() || bonds.empty()) throw ConfigError("correlator: empty input");
    double acc = 0;
    for (const auto& s : snaps)
        for (const auto& [i, j] : bonds)
            acc += (1.0 - 2.0 * s[static_cast<std::size_t>(i)]) *
                   (1.0 - 2.0 * s[static_cast<std::size_t>(j)]);
    return acc / (static_cast<double>(snaps.size()) * static_cast<double>(bonds.size()));
}

}  // namespace

double nn_correlator(const std::vector<qsim::Snapshot>& snaps, const qsim::Geometry& g) {
    return bond_correlator(snaps, nn_bonds(g));
}

double nnn_correlator(const std::vector<qsim::Snapshot>& snaps, const qsim::Geometry& g) {
    return bond_correlator(snaps, nnn_bonds(g));
}

qsim::PauliTerm string_order_observable(int i, int j) {
    if (i >= j) throw ConfigError("string_order: need i < j");
    qsim::PauliTerm t;
    t.coefficient = 1.0;
    t.ops.push_back({i, qsim::Pauli::Z});
    for (int k = i + 1; k < j; ++k) t.ops.push_back({k, qsim::Pauli::X});
    t.ops.push_back({j, qsim::Pauli::Z});
    return t;
}

double string_order_state(const qsim::State& psi, int i, int j) {
    return qsim::expectation(psi, string_order_observable(i, j));
}

shadows::Estimate string_order_shadows(const shadows::ShadowEnsemble& ensemble, int i, int j,
                                       int k_groups) {
    return shadows::estimate_observable(ensemble, string_order_observable(i, j), k_groups);
}

CornerOrder corner_order(const std::vector<qsim::Snapshot>& snaps, int lx, int ly) {
    if (lx < 3 || ly < 3) throw ConfigError("corner_order: lattice must be at least 3x3");
    if (snaps.empty()) throw ConfigError("corner_order: no snapshots");
    auto site = [lx](int r, int c) { return r * lx + c; };
    // (corner, edge-adjacent a, edge-adjacent b, diagonal)
    const int corners[4][4] = {
        {site(0, 0), site(0, 1), site(1, 0), site(1, 1)},
        {site(0, lx - 1), site(0, lx - 2), site(1, lx - 1), site(1, lx - 2)},
        {site(ly - 1, 0), site(ly - 2, 0), site(ly - 1, 1), site(ly - 2, 1)},
        {site(ly - 1, lx - 1), site(ly - 1, lx - 2), site(ly - 2, lx - 1), site(ly - 2, lx - 2)}};
    // NN bonds with both endpoints away from the four corner sites
    std::vector<bool> is_corner(static_cast<std::size_t>(lx * ly), false);
    for (const auto& c : corners) is_corner[static_cast<std::size_t>(c[0])] = true;
    std::vector<std::pair<int, int>> bonds;
    for (const auto& [a, b] : nn_bonds({qsim::Geometry::Kind::Square, lx, ly}))
        if (!is_corner[static_cast<std::size_t>(a)] && !is_corner[static_cast<std::size_t>(b)])
            bonds.emplace_back(a, b);

    CornerOrder out;
    double f_acc = 0, corr_acc = 0;
    for (const auto& s : snaps) {
        double f = 0;
        for (const auto& c : corners) {
            const double x1 = s[static_cast<std::size_t>(c[0])];
            const double x2 = s[static_cast<std::size_t>(c[1])];
            const double x3 = s[static_cast<std::size_t>(c[2])];
            const double x4 = s[static_cast<std::size_t>(c[3])];
            f += x1 * x4 + 2.0 * x2 * x3;
        }
        f_acc += f / 4.0;
        double corr = 0;
        for (const auto& [a, b] : bonds)
            corr += s[static_cast<std::size_t>(a)] * s[static_cast<std::size_t>(b)];
        corr_acc += corr / static_cast<double>(bonds.size());
    }
    out.f = f_acc / static_cast<double>(snaps.size());
    out.bulk_edge_nn = corr_acc / static_cast<double>(snaps.size());
    out.f_tilde = out.f - out.bulk_edge_nn;
    return out;
}

BubbleDistribution x_bubble_distribution(const std::vector<qsim::Snapshot>& snaps) {
    if (snaps.empty()) throw ConfigError("x_bubble_distribution: no snapshots");
    const std::size_t n = snaps[0].size();
    BubbleDistribution dist;
    dist.counts.assign(n, 0);
    for (const auto& s : snaps) {
        std::size_t run = 1;
        for (std::size_t i = 1; i <= s.size(); ++i) {
            if (i < s.size() && s[i] == s[i - 1]) {
                ++run;
            } else {
                ++dist.counts[run - 1];
                run = 1;
            }
        }
    }
    for (auto c : dist.counts) dist.total += c;
    dist.p.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        dist.p[i] = static_cast<double>(dist.counts[i]) / static_cast<double>(dist.total);
    return dist;
}

namespace {

// least squares y = a + b x
std::pair<double, double> linfit(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const auto n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double a = (sy - b * sx) / n;
    return {a, b};
}

FitResult fit_form(const BubbleDistribution& dist, bool power) {
    std::vector<double> xs, ys, s_vals, p_vals;
    for (std::size_t i = 0; i < dist.p.size(); ++i) {
        if (dist.p[i] <= 0) continue;
        const double s = static_cast<double>(i + 1);
        s_vals.push_back(s);
        p_vals.push_back(dist.p[i]);
        xs.push_back(power ? std::log(s) : s);
        ys.push_back(std::log(dist.p[i]));
    }
    FitResult fit;
    fit.reliable = s_vals.size() >= 4;
    if (s_vals.size() < 2) {
        fit.reliable = false;
        return fit;
    }
    const auto [a, b] = linfit(xs, ys);
    fit.amplitude = std::exp(a);
    if (power) {
        fit.exponent = b;
    } else {
        fit.exponent = b;
        fit.scale = b != 0 ? -1.0 / b : 0.0;
    }
    // quality metrics in the original P(s) space
    double mean_p = 0;
    for (double p : p_vals) mean_p += p;
    mean_p /= static_cast<double>(p_vals.size());
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < s_vals.size(); ++i) {
        const double fit_p = power ? fit.amplitude * std::pow(s_vals[i], fit.exponent)
                                   : fit.amplitude * std::exp(b * s_vals[i]);
        ss_res += (p_vals[i] - fit_p) * (p_vals[i] - fit_p);
        ss_tot += (p_vals[i] - mean_p) * (p_vals[i] - mean_p);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    fit.rmse = std::sqrt(ss_res / static_cast<double>(s_vals.size()));
    return fit;
}

}  // namespace

FitResult fit_power_law(const BubbleDistribution& p) { return fit_form(p, true); }
FitResult fit_exponential(const BubbleDistribution& p) { return fit_form(p, false); }

double ipr_from_cp(const std::vector<double>& probabilities) {
    if (probabilities.empty()) throw ConfigError("ipr_from_cp: empty input");
    double acc = 0;
    for (double p : probabilities) {
        if (p < 0.0 || p > 1.0) throw ConfigError("ipr_from_cp: probability out of [0,1]");
        acc += p * p;
    }
    return acc / static_cast<double>(probabilities.size());
}

FdRepulsionMap fd_repulsion_map(const vae::VaeModel& model, const data::Dataset& dataset) {
    if (dataset.kind != data::Kind::FkmHybrid)
        throw ConfigError("fd_repulsion_map: needs a hybrid dataset");
    const int n = dataset.n_sites;
    FdRepulsionMap map;
    map.cp_product.resize(dataset.records.size(), 0.0);
    map.raw_correlator.resize(dataset.records.size(), 0.0);

    // latent means per grid point drive the decoder; site (0,0) clamped
    // occupied to fix the Z2 sector
    for (std::size_t p = 0; p < dataset.records.size(); ++p) {
        const auto stats = model.encode(dataset.records[p]);
        std::vector<double> z(static_cast<std::size_t>(model.config().latent_dim), 0.0);
        for (const auto& st : stats)
            for (std::size_t j = 0; j < z.size(); ++j) z[j] += st.mu[j] / static_cast<double>(stats.size());
        const auto cp = model.conditional_probability_map({z}, {{0, 1.0}})[0];
        double prod = 0;
        for (int i = 0; i < n; ++i)
            prod += cp[static_cast<std::size_t>(2 * i)] * cp[static_cast<std::size_t>(2 * i + 1)];
        map.cp_product[p] = prod / static_cast<double>(n);

        double corr = 0;
        for (const auto& snap : dataset.records[p]) {
            double c = 0;
            for (int i = 0; i < n; ++i)
                c += (snap[static_cast<std::size_t>(2 * i)] - 0.5) *
                     (snap[static_cast<std::size_t>(2 * i + 1)] - 0.5);
            corr += c / static_cast<double>(n);
        }
        map.raw_correlator[p] = corr / static_cast<double>(dataset.records[p].size());
    }
    return map;
}

}  // namespace qdisc::analysis
