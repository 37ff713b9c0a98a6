#include "qdisc/fkm.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "qdisc/errors.hpp"
#include "qdisc/rng.hpp"

namespace qdisc::fkm {

namespace {

Eigen::MatrixXd hopping_matrix(int L, bool periodic) {
    const int n = L * L;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    auto site = [L](int r, int c) { return r * L + c; };
    for (int r = 0; r < L; ++r)
        for (int c = 0; c < L; ++c) {
            const int i = site(r, c);
            if (c + 1 < L || periodic) {
                const int j = site(r, (c + 1) % L);
                if (i != j) h(i, j) = h(j, i) = -1.0;
            }
            if (r + 1 < L || periodic) {
                const int j = site((r + 1) % L, c);
                if (i != j) h(i, j) = h(j, i) = -1.0;
            }
        }
    return h;
}

// log(1 + exp(-e/T)) without overflow
double log1p_exp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct WeightEval {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    Eigen::MatrixXd base;

    explicit WeightEval(int L, bool periodic) : base(hopping_matrix(L, periodic)) {}

    // returns log W and leaves eigen-decomposition available for densities
    double evaluate(double U, double T, const std::vector<std::uint8_t>& f) {
        Eigen::MatrixXd h = base;
        double nf_sum = 0;
        for (int i = 0; i < h.rows(); ++i) {
            h(i, i) += U * (static_cast<double>(f[static_cast<std::size_t>(i)]) - 0.5);
            nf_sum += f[static_cast<std::size_t>(i)];
        }
        solver.compute(h);
        const double e0 = -0.5 * U * (nf_sum - 0.5 * static_cast<double>(h.rows()));
        double logw = -e0 / T;
        for (int k = 0; k < h.rows(); ++k) logw += log1p_exp(-solver.eigenvalues()[k] / T);
        return logw;
    }

    std::vector<double> densities(double T) const {
        const int n = static_cast<int>(solver.eigenvalues().size());
        std::vector<double> d(static_cast<std::size_t>(n), 0.0);
        for (int k = 0; k < n; ++k) {
            const double occ = 1.0 / (1.0 + std::exp(solver.eigenvalues()[k] / T));
            for (int i = 0; i < n; ++i)
                d[static_cast<std::size_t>(i)] += solver.eigenvectors()(i, k) *
                                                  solver.eigenvectors()(i, k) * occ;
        }
        return d;
    }
};

}  // namespace

double log_weight(int L, double U, double T, const std::vector<std::uint8_t>& f, bool periodic) {
    if (T <= 0) throw ConfigError("fkm: temperature must be positive");
    WeightEval w(L, periodic);
    return w.evaluate(U, T, f);
}

double staggered_f_order(const std::vector<std::uint8_t>& f, int L) {
    double s = 0;
    for (int r = 0; r < L; ++r)
        for (int c = 0; c < L; ++c) {
            const double v = static_cast<double>(f[static_cast<std::size_t>(r * L + c)]) - 0.5;
            s += ((r + c) % 2 == 0) ? v : -v;
        }
    return std::abs(s) * 2.0 / static_cast<double>(L * L);
}

std::vector<Record> sample(int L, double U, double T, int n_records, std::uint64_t seed,
                           const Options& opts) {
    if (T <= 0) throw ConfigError("fkm: temperature must be positive");
    if (L < 2) throw ConfigError("fkm: L must be >= 2");
    const int n = L * L;
    const int burnin = opts.burnin_sweeps >= 0 ? opts.burnin_sweeps : 10 * n;
    const int per_record = opts.flips_per_record > 0 ? opts.flips_per_record : n;

    rng::Engine eng(seed);
    std::vector<std::uint8_t> f(static_cast<std::size_t>(n));
    for (auto& b : f) b = eng.uniform() < 0.5 ? 1 : 0;

    WeightEval weights(L, opts.periodic);

    auto metropolis_sweep = [&](double temp, double& logw) {
        for (int flip = 0; flip < n; ++flip) {
            const auto j = static_cast<std::size_t>(eng.below(static_cast<std::uint64_t>(n)));
            f[j] ^= 1;
            const double trial = weights.evaluate(U, temp, f);
            const double ratio = trial - logw;
            if (ratio >= 0 || eng.uniform() < std::exp(ratio)) {
                logw = trial;
            } else {
                f[j] ^= 1;
            }
        }
    };

    // annealed burn-in, then fixed-T equilibrium sampling
    double t_anneal = std::max(T, 0.5);
    const double decay = burnin > 0 ? std::pow(T / t_anneal, 1.0 / burnin) : 1.0;
    double logw = weights.evaluate(U, t_anneal, f);
    for (int s = 0; s < burnin; ++s) {
        metropolis_sweep(t_anneal, logw);
        t_anneal = std::max(T, t_anneal * decay);
        logw = weights.evaluate(U, t_anneal, f);
    }
    logw = weights.evaluate(U, T, f);

    std::vector<Record> out;
    out.reserve(static_cast<std::size_t>(n_records));
    for (int r = 0; r < n_records; ++r) {
        for (int flip = 0; flip < per_record; ++flip) {
            const auto j = static_cast<std::size_t>(eng.below(static_cast<std::uint64_t>(n)));
            f[j] ^= 1;
            const double trial = weights.evaluate(U, T, f);
            if (trial - logw >= 0 || eng.uniform() < std::exp(trial - logw)) {
                logw = trial;
            } else {
                f[j] ^= 1;
            }
        }
        // recompute so the stored decomposition matches the current f
        logw = weights.evaluate(U, T, f);
        out.push_back(Record{f, weights.densities(T)});
    }
    return out;
}

}  // namespace qdisc::fkm
