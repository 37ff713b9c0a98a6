#include "qdisc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "qdisc/errors.hpp"
#include "qdisc/kernels.hpp"

namespace qdisc::optim {

void AdaBelief::step(std::vector<ad::Tensor*>& params,
                     const std::vector<const std::vector<double>*>& grads,
                     const std::vector<std::string>* names) {
    if (params.size() != grads.size()) throw ConfigError("adabelief: params/grads size mismatch");
    if (m_.empty()) {
        m_.resize(params.size());
        s_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->data.size(), 0.0);
            s_[i].assign(params[i]->data.size(), 0.0);
        }
    }
    ++step_count_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, eps = cfg_.eps;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->data;
        const auto& g = *grads[i];
        if (p.size() != g.size()) throw ConfigError("adabelief: gradient shape mismatch");
        auto& m = m_[i];
        auto& s = s_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            if (!std::isfinite(gj))
                throw NumericError("adabelief: non-finite gradient for parameter " +
                                   (names ? (*names)[i] : std::to_string(i)));
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            const double diff = gj - m[j];
            s[j] = b2 * s[j] + (1.0 - b2) * diff * diff + eps;
            const double mhat = m[j] / bc1;
            const double shat = s[j] / bc2;
            p[j] -= cfg_.lr * mhat / (std::sqrt(shat) + eps);
        }
    }
}

void AdaBelief::step(nn::ParamSet& ps, nn::Bound& bd, ad::Tape& tape) {
    std::vector<ad::Tensor*> params;
    std::vector<const std::vector<double>*> grads;
    std::vector<std::string> names;
    params.reserve(ps.count());
    for (std::size_t i = 0; i < ps.count(); ++i) {
        params.push_back(&ps.tensor(i));
        grads.push_back(&tape.grad(bd.ids[i]).data);
        names.push_back(ps.name(i));
    }
    step(params, grads, &names);
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return kernels::active().dot(a.data(), b.data(), a.size());
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

void project(std::vector<double>& x, const LbfgsOptions& o) {
    if (o.lower)
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::max(x[i], (*o.lower)[i]);
    if (o.upper)
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::min(x[i], (*o.upper)[i]);
}

struct Probe {
    double f;
    double dg;  // directional derivative
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& objective, std::vector<double> init,
                           const LbfgsOptions& opts) {
    const std::size_t n = init.size();
    project(init, opts);
    std::vector<double> x = std::move(init);
    std::vector<double> g(n), gnew(n), xnew(n), dir(n);
    double fx = objective(x, g);
    if (!std::isfinite(fx)) throw NumericError("lbfgs: objective not finite at initial point");

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;

    LbfgsResult res;
    const double c1 = 1e-4, c2 = 0.9;

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        const double gn = norm(g);
        if (gn <= opts.gradient_tolerance) {
            res.converged = true;
            res.iterations = iter;
            break;
        }
        // two-loop recursion
        dir = g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[static_cast<std::size_t>(i)] =
                rho_hist[static_cast<std::size_t>(i)] * dot(s_hist[static_cast<std::size_t>(i)], dir);
            kernels::active().axpy(-alpha[static_cast<std::size_t>(i)],
                                   y_hist[static_cast<std::size_t>(i)].data(), dir.data(), n);
        }
        if (!s_hist.empty()) {
            const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            kernels::active().scal(gamma, dir.data(), n);
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * dot(y_hist[i], dir);
            kernels::active().axpy(alpha[i] - beta, s_hist[i].data(), dir.data(), n);
        }
        for (auto& d : dir) d = -d;

        double dg0 = dot(g, dir);
        if (dg0 >= 0) {  // not a descent direction; restart with steepest descent
            for (std::size_t i = 0; i < n; ++i) dir[i] = -g[i];
            dg0 = -gn * gn;
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // strong Wolfe line search (bracket + zoom)
        auto probe = [&](double t) -> Probe {
            for (std::size_t i = 0; i < n; ++i) xnew[i] = x[i] + t * dir[i];
            project(xnew, opts);
            const double f = objective(xnew, gnew);
            return {f, dot(gnew, dir)};
        };
        double t_prev = 0.0, f_prev = fx;
        double t = 1.0;
        double t_lo = 0, t_hi = 0, f_lo = 0;
        bool bracketed = false, ok = false;
        Probe pr{};
        for (int ls = 0; ls < 30; ++ls) {
            pr = probe(t);
            if (!std::isfinite(pr.f) || pr.f > fx + c1 * t * dg0 || (ls > 0 && pr.f >= f_prev)) {
                t_lo = t_prev;
                f_lo = f_prev;
                t_hi = t;
                bracketed = true;
                break;
            }
            if (std::abs(pr.dg) <= -c2 * dg0) {
                ok = true;
                break;
            }
            if (pr.dg >= 0) {
                t_lo = t;
                f_lo = pr.f;
                t_hi = t_prev;
                bracketed = true;
                break;
            }
            t_prev = t;
            f_prev = pr.f;
            t *= 2.0;
        }
        if (bracketed && !ok) {
            for (int z = 0; z < 30; ++z) {
                t = 0.5 * (t_lo + t_hi);
                pr = probe(t);
                if (!std::isfinite(pr.f) || pr.f > fx + c1 * t * dg0 || pr.f >= f_lo) {
                    t_hi = t;
                } else {
                    if (std::abs(pr.dg) <= -c2 * dg0) {
                        ok = true;
                        break;
                    }
                    if (pr.dg * (t_hi - t_lo) >= 0) t_hi = t_lo;
                    t_lo = t;
                    f_lo = pr.f;
                }
                if (std::abs(t_hi - t_lo) < 1e-16) break;
            }
        }
        if (!ok && !(std::isfinite(pr.f) && pr.f < fx)) {
            // line search failed to make progress
            res.iterations = iter;
            break;
        }

        // accept
        std::vector<double> s_vec(n), y_vec(n);
        for (std::size_t i = 0; i < n; ++i) {
            s_vec[i] = xnew[i] - x[i];
            y_vec[i] = gnew[i] - g[i];
        }
        x = xnew;
        fx = pr.f;
        g = gnew;
        const double sy = dot(s_vec, y_vec);
        if (sy > 1e-12 * norm(s_vec) * norm(y_vec)) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        res.iterations = iter + 1;
    }
    res.x = std::move(x);
    res.fx = fx;
    res.gradient_norm = norm(g);
    if (!res.converged) res.converged = res.gradient_norm <= opts.gradient_tolerance;
    return res;
}

}  // namespace qdisc::optim
