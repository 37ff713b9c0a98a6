#include "qdisc/qsim.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>

#include "qdisc/rng.hpp"

namespace qdisc::qsim {

namespace {

constexpr int kDenseMaxSites = 12;
constexpr int kMaxSites = 20;
constexpr int kKrylovMax = 200;
constexpr int kLanczosRestarts = 5;
constexpr double kLanczosTol = 1e-10;

struct CompiledTerm {
    double coeff;
    std::uint32_t flip_mask;  // X and Y sites
    std::uint32_t sign_mask;  // Z and Y sites contribute (-1)^popcount(s & mask)
    int n_y;
};

CompiledTerm compile_term(const PauliTerm& t, int n_sites) {
    CompiledTerm c{t.coefficient, 0, 0, 0};
    for (const auto& op : t.ops) {
        if (op.site < 0 || op.site >= n_sites)
            throw ConfigError("pauli term references site " + std::to_string(op.site) +
                              " outside [0," + std::to_string(n_sites) + ")");
        const std::uint32_t bit = 1u << op.site;
        switch (op.p) {
            case Pauli::X: c.flip_mask |= bit; break;
            case Pauli::Y:
                c.flip_mask |= bit;
                c.sign_mask |= bit;
                ++c.n_y;
                break;
            case Pauli::Z: c.sign_mask |= bit; break;
        }
    }
    return c;
}

std::vector<CompiledTerm> compile(const SpinHamiltonian& h) {
    std::vector<CompiledTerm> out;
    out.reserve(h.terms.size());
    for (const auto& t : h.terms) out.push_back(compile_term(t, h.n_sites));
    return out;
}

bool all_real(const std::vector<CompiledTerm>& terms) {
    for (const auto& t : terms)
        if (t.n_y % 2 != 0) return false;
    return true;
}

// real amplitude of a term with even Y count: coeff * i^nY in {+-coeff}
double real_base(const CompiledTerm& t) { return (t.n_y % 4 == 0) ? t.coeff : -t.coeff; }

// Pure-Z terms land on the diagonal; precomputing it once collapses the
// dominant all-pairs interaction work into a single elementwise pass.
struct RealMatvec {
    std::vector<double> diagonal;
    std::vector<CompiledTerm> off_diagonal;

    RealMatvec(const std::vector<CompiledTerm>& terms, std::size_t dim) {
        diagonal.assign(dim, 0.0);
        for (const auto& t : terms) {
            if (t.flip_mask == 0) {
                const double base = real_base(t);
                for (std::size_t s = 0; s < dim; ++s)
                    diagonal[s] +=
                        (std::popcount(static_cast<std::uint32_t>(s) & t.sign_mask) & 1) ? -base
                                                                                         : base;
            } else {
                off_diagonal.push_back(t);
            }
        }
    }

    void operator()(const std::vector<double>& in, std::vector<double>& out) const {
        const std::size_t dim = in.size();
        for (std::size_t s = 0; s < dim; ++s) out[s] += diagonal[s] * in[s];
        for (const auto& t : off_diagonal) {
            const double base = real_base(t);
            if (t.sign_mask == 0) {
                for (std::size_t s = 0; s < dim; ++s) out[s ^ t.flip_mask] += base * in[s];
            } else {
                for (std::size_t s = 0; s < dim; ++s) {
                    const double amp =
                        (std::popcount(static_cast<std::uint32_t>(s) & t.sign_mask) & 1) ? -base
                                                                                         : base;
                    out[s ^ t.flip_mask] += amp * in[s];
                }
            }
        }
    }
};

void apply_complex(const std::vector<CompiledTerm>& terms, const State& in, State& out) {
    const std::size_t dim = in.size();
    const std::complex<double> ipow[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    for (const auto& t : terms) {
        const std::complex<double> base = t.coeff * ipow[t.n_y % 4];
        for (std::size_t s = 0; s < dim; ++s) {
            const double sign =
                (std::popcount(static_cast<std::uint32_t>(s) & t.sign_mask) & 1) ? -1.0 : 1.0;
            out[s ^ t.flip_mask] += base * sign * in[s];
        }
    }
}

template <class Vec>
void reorthogonalize(const std::vector<Vec>& basis, Vec& w) {
    // two classical Gram-Schmidt passes
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& v : basis) {
            if constexpr (std::is_same_v<typename Vec::value_type, double>) {
                double d = 0;
                for (std::size_t i = 0; i < w.size(); ++i) d += v[i] * w[i];
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= d * v[i];
            } else {
                std::complex<double> d = 0;
                for (std::size_t i = 0; i < w.size(); ++i) d += std::conj(v[i]) * w[i];
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= d * v[i];
            }
        }
    }
}

template <class Vec>
double vec_norm(const Vec& v) {
    double s = 0;
    for (const auto& x : v) s += std::norm(x);
    return std::sqrt(s);
}

// Lanczos with full reorthogonalization for the lowest eigenpair.
template <class Vec, class MatVec>
std::pair<double, Vec> lanczos_lowest(const MatVec& matvec, Vec v0, double tol, std::string* err) {
    const std::size_t dim = v0.size();
    double best_res = 1e300;
    for (int restart = 0; restart < kLanczosRestarts; ++restart) {
        const double n0 = vec_norm(v0);
        for (auto& x : v0) x /= n0;
        std::vector<Vec> basis{v0};
        std::vector<double> alpha, beta;
        Vec w(dim);
        int converged_k = -1;
        Eigen::VectorXd ritz_coeffs;
        double ritz_val = 0;
        for (int k = 0; k < kKrylovMax; ++k) {
            std::fill(w.begin(), w.end(), typename Vec::value_type(0));
            matvec(basis.back(), w);
            // alpha_k = <v_k, w>
            double a = 0;
            for (std::size_t i = 0; i < dim; ++i) {
                if constexpr (std::is_same_v<typename Vec::value_type, double>)
                    a += basis.back()[i] * w[i];
                else
                    a += std::real(std::conj(basis.back()[i]) * w[i]);
            }
            alpha.push_back(a);
            reorthogonalize(basis, w);
            const double b = vec_norm(w);
            // Ritz pair of the current tridiagonal
            const int m = static_cast<int>(alpha.size());
            Eigen::VectorXd diag(m), sub(std::max(0, m - 1));
            for (int i = 0; i < m; ++i) diag[i] = alpha[static_cast<std::size_t>(i)];
            for (int i = 0; i + 1 < m; ++i) sub[i] = beta[static_cast<std::size_t>(i)];
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
            es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
            int lo = 0;
            es.eigenvalues().minCoeff(&lo);
            ritz_val = es.eigenvalues()[lo];
            ritz_coeffs = es.eigenvectors().col(lo);
            const double resid = b * std::abs(ritz_coeffs[m - 1]);
            if (resid < tol || b < 1e-14) {
                converged_k = m;
                best_res = resid;
                break;
            }
            best_res = std::min(best_res, resid);
            if (k + 1 == kKrylovMax) break;
            beta.push_back(b);
            for (auto& x : w) x /= b;
            basis.push_back(w);
        }
        // assemble the Ritz vector
        Vec ritz(dim, typename Vec::value_type(0));
        for (std::size_t j = 0; j < basis.size() && j < static_cast<std::size_t>(ritz_coeffs.size());
             ++j) {
            const double cj = ritz_coeffs[static_cast<Eigen::Index>(j)];
            for (std::size_t i = 0; i < dim; ++i) ritz[i] += cj * basis[j][i];
        }
        const double rn = vec_norm(ritz);
        for (auto& x : ritz) x /= rn;
        if (converged_k >= 0) return {ritz_val, std::move(ritz)};
        v0 = std::move(ritz);  // restart from the best Ritz vector
    }
    if (err)
        *err = "lanczos failed to converge: residual norm " + std::to_string(best_res) +
               " after " + std::to_string(kLanczosRestarts) + " restarts";
    return {0.0, Vec{}};
}

void fix_phase(State& psi) {
    std::size_t imax = 0;
    double amax = -1;
    for (std::size_t i = 0; i < psi.size(); ++i) {
        const double a = std::norm(psi[i]);
        if (a > amax) {
            amax = a;
            imax = i;
        }
    }
    const std::complex<double> z = psi[imax];
    const double az = std::abs(z);
    if (az == 0) return;
    const std::complex<double> rot = std::conj(z) / az;
    for (auto& x : psi) x *= rot;
}

// single-qubit gate on site q: |0>,|1> components mixed by g
void apply_gate(State& psi, int q, const std::complex<double> g[2][2]) {
    const std::size_t dim = psi.size();
    const std::size_t bit = std::size_t{1} << q;
    for (std::size_t s = 0; s < dim; ++s) {
        if (s & bit) continue;
        const std::complex<double> a = psi[s];
        const std::complex<double> b = psi[s | bit];
        psi[s] = g[0][0] * a + g[0][1] * b;
        psi[s | bit] = g[1][0] * a + g[1][1] * b;
    }
}

const double kInvSqrt2 = 0.70710678118654752440084436210485;

// rotate site so that measuring Z afterwards is equivalent to measuring
// the requested Pauli before (X: H, Y: H S^dagger, Z: identity)
void rotate_to_basis(State& psi, int q, Pauli basis) {
    if (basis == Pauli::Z) return;
    if (basis == Pauli::X) {
        const std::complex<double> h[2][2] = {{kInvSqrt2, kInvSqrt2}, {kInvSqrt2, -kInvSqrt2}};
        apply_gate(psi, q, h);
    } else {
        const std::complex<double> g[2][2] = {{kInvSqrt2, std::complex<double>(0, -kInvSqrt2)},
                                              {kInvSqrt2, std::complex<double>(0, kInvSqrt2)}};
        apply_gate(psi, q, g);
    }
}

Snapshot born_sample(const State& psi, int n_sites, rng::Engine& eng, std::vector<double>& cdf) {
    cdf.resize(psi.size());
    double acc = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) {
        acc += std::norm(psi[i]);
        cdf[i] = acc;
    }
    const std::size_t s = eng.from_cdf(cdf);
    Snapshot snap(static_cast<std::size_t>(n_sites));
    for (int i = 0; i < n_sites; ++i) snap[static_cast<std::size_t>(i)] = (s >> i) & 1u;
    return snap;
}

}  // namespace

int snake_order(int row, int col, int lx) {
    if (lx <= 0 || row < 0 || col < 0 || col >= lx)
        throw ConfigError("snake_order: index (" + std::to_string(row) + "," + std::to_string(col) +
                          ") out of range for width " + std::to_string(lx));
    return (row % 2 == 0) ? row * lx + col : row * lx + (lx - 1 - col);
}

std::vector<int> snake_permutation(int lx, int ly) {
    std::vector<int> perm(static_cast<std::size_t>(lx * ly));
    for (int r = 0; r < ly; ++r)
        for (int c = 0; c < lx; ++c)
            perm[static_cast<std::size_t>(snake_order(r, c, lx))] = r * lx + c;
    return perm;
}

SpinHamiltonian build_j1j2(int L, double j2, double h) {
    if (L < 2) throw ConfigError("build_j1j2: L must be >= 2");
    SpinHamiltonian ham;
    ham.n_sites = L * L;
    ham.geometry = {Geometry::Kind::Square, L, L};
    auto site = [L](int r, int c) { return r * L + c; };
    for (int r = 0; r < L; ++r)
        for (int c = 0; c < L; ++c) {
            if (c + 1 < L)
                ham.terms.push_back({1.0, {{site(r, c), Pauli::Z}, {site(r, c + 1), Pauli::Z}}});
            if (r + 1 < L)
                ham.terms.push_back({1.0, {{site(r, c), Pauli::Z}, {site(r + 1, c), Pauli::Z}}});
            if (r + 1 < L && c + 1 < L) {
                ham.terms.push_back({j2, {{site(r, c), Pauli::Z}, {site(r + 1, c + 1), Pauli::Z}}});
                ham.terms.push_back({j2, {{site(r, c + 1), Pauli::Z}, {site(r + 1, c), Pauli::Z}}});
            }
        }
    for (int i = 0; i < ham.n_sites; ++i) ham.terms.push_back({h, {{i, Pauli::X}}});
    return ham;
}

SpinHamiltonian build_cluster_ising(int n, double h1, double h2) {
    if (n < 3) throw ConfigError("build_cluster_ising: N must be >= 3");
    SpinHamiltonian ham;
    ham.n_sites = n;
    ham.geometry = {Geometry::Kind::Chain, n, 1};
    for (int i = 0; i < n; ++i) {
        PauliTerm t;
        t.coefficient = -1.0;
        if (i > 0) t.ops.push_back({i - 1, Pauli::Z});
        t.ops.push_back({i, Pauli::X});
        if (i + 1 < n) t.ops.push_back({i + 1, Pauli::Z});
        ham.terms.push_back(std::move(t));
    }
    for (int i = 0; i < n; ++i) ham.terms.push_back({-h1, {{i, Pauli::X}}});
    for (int i = 0; i + 1 < n; ++i)
        ham.terms.push_back({-h2, {{i, Pauli::X}, {i + 1, Pauli::X}}});
    return ham;
}

SpinHamiltonian build_rydberg(int lx, int ly, double rb_over_a, double delta_over_omega) {
    if (lx * ly > kMaxSites)
        throw ConfigError("build_rydberg: lattice " + std::to_string(lx) + "x" + std::to_string(ly) +
                          " exceeds " + std::to_string(kMaxSites) + " sites");
    SpinHamiltonian ham;
    ham.n_sites = lx * ly;
    ham.geometry = {Geometry::Kind::Square, lx, ly};
    const double omega = 1.0;
    const double c6 = omega * std::pow(rb_over_a, 6.0);
    const double delta = delta_over_omega * omega;
    // n_i n_j = (1 - sz_i - sz_j + sz_i sz_j)/4 in the bit-1-is-occupied convention
    double id_coeff = 0.0;
    std::vector<double> z_coeff(static_cast<std::size_t>(ham.n_sites), 0.0);
    for (int i = 0; i < ham.n_sites; ++i) {
        const double xi = i % lx, yi = i / lx;
        for (int j = i + 1; j < ham.n_sites; ++j) {
            const double xj = j % lx, yj = j / lx;
            const double d2 = (xi - xj) * (xi - xj) + (yi - yj) * (yi - yj);
            const double v = c6 / (d2 * d2 * d2);
            id_coeff += v / 4.0;
            z_coeff[static_cast<std::size_t>(i)] -= v / 4.0;
            z_coeff[static_cast<std::size_t>(j)] -= v / 4.0;
            ham.terms.push_back({v / 4.0, {{i, Pauli::Z}, {j, Pauli::Z}}});
        }
    }
    // detuning: -Delta n_i = -Delta/2 + Delta/2 sz_i
    id_coeff += -delta / 2.0 * ham.n_sites;
    for (int i = 0; i < ham.n_sites; ++i) z_coeff[static_cast<std::size_t>(i)] += delta / 2.0;
    for (int i = 0; i < ham.n_sites; ++i)
        ham.terms.push_back({z_coeff[static_cast<std::size_t>(i)], {{i, Pauli::Z}}});
    ham.terms.push_back({id_coeff, {}});
    for (int i = 0; i < ham.n_sites; ++i) ham.terms.push_back({-omega / 2.0, {{i, Pauli::X}}});
    return ham;
}

void apply_hamiltonian(const SpinHamiltonian& h, const State& in, State& out) {
    if (out.size() != in.size()) out.assign(in.size(), {0, 0});
    apply_complex(compile(h), in, out);
}

GroundState ground_state(const SpinHamiltonian& h, Solver solver) {
    if (h.n_sites < 1 || h.n_sites > kMaxSites)
        throw ConfigError("ground_state: N = " + std::to_string(h.n_sites) + " unsupported (max " +
                          std::to_string(kMaxSites) + ")");
    const auto terms = compile(h);
    const std::size_t dim = std::size_t{1} << h.n_sites;
    const bool real = all_real(terms);
    const bool use_dense =
        solver == Solver::Dense || (solver == Solver::Auto && h.n_sites <= kDenseMaxSites);
    GroundState gs;
    if (use_dense) {
        if (real) {
            Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                                      static_cast<Eigen::Index>(dim));
            for (const auto& t : terms) {
                const double base = real_base(t);
                for (std::size_t s = 0; s < dim; ++s) {
                    const double amp =
                        (std::popcount(static_cast<std::uint32_t>(s) & t.sign_mask) & 1) ? -base
                                                                                         : base;
                    m(static_cast<Eigen::Index>(s ^ t.flip_mask), static_cast<Eigen::Index>(s)) +=
                        amp;
                }
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
            gs.energy = es.eigenvalues()[0];
            gs.psi.resize(dim);
            for (std::size_t i = 0; i < dim; ++i)
                gs.psi[i] = es.eigenvectors()(static_cast<Eigen::Index>(i), 0);
        } else {
            Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim),
                                                        static_cast<Eigen::Index>(dim));
            const std::complex<double> ipow[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
            for (const auto& t : terms) {
                const std::complex<double> base = t.coeff * ipow[t.n_y % 4];
                for (std::size_t s = 0; s < dim; ++s) {
                    const double sign =
                        (std::popcount(static_cast<std::uint32_t>(s) & t.sign_mask) & 1) ? -1.0
                                                                                         : 1.0;
                    m(static_cast<Eigen::Index>(s ^ t.flip_mask), static_cast<Eigen::Index>(s)) +=
                        base * sign;
                }
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m);
            gs.energy = es.eigenvalues()[0];
            gs.psi.resize(dim);
            for (std::size_t i = 0; i < dim; ++i)
                gs.psi[i] = es.eigenvectors()(static_cast<Eigen::Index>(i), 0);
        }
    } else {
        std::string err;
        rng::Engine eng(0x9d5c0ffeeULL);
        if (real) {
            std::vector<double> v0(dim);
            for (auto& x : v0) x = eng.normal();
            auto mv = [&](const std::vector<double>& in, std::vector<double>& out) {
                apply_real(terms, in, out);
            };
            auto [val, vec] = lanczos_lowest(mv, std::move(v0), kLanczosTol, &err);
            if (vec.empty()) throw NumericError("ground_state: " + err);
            gs.energy = val;
            gs.psi.resize(dim);
            for (std::size_t i = 0; i < dim; ++i) gs.psi[i] = vec[i];
        } else {
            State v0(dim);
            for (auto& x : v0) x = {eng.normal(), eng.normal()};
            auto mv = [&](const State& in, State& out) { apply_complex(terms, in, out); };
            auto [val, vec] = lanczos_lowest(mv, std::move(v0), kLanczosTol, &err);
            if (vec.empty()) throw NumericError("ground_state: " + err);
            gs.energy = val;
            gs.psi = std::move(vec);
        }
    }
    fix_phase(gs.psi);
    return gs;
}

double expectation(const State& psi, const PauliTerm& observable) {
    return expectation(psi, std::vector<PauliTerm>{observable});
}

double expectation(const State& psi, const std::vector<PauliTerm>& observable) {
    int n_sites = 0;
    while ((std::size_t{1} << n_sites) < psi.size()) ++n_sites;
    std::vector<CompiledTerm> terms;
    for (const auto& t : observable) terms.push_back(compile_term(t, n_sites));
    State tmp(psi.size(), {0, 0});
    apply_complex(terms, psi, tmp);
    std::complex<double> v = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) v += std::conj(psi[i]) * tmp[i];
    return v.real();
}

std::vector<double> site_occupations(const State& psi, int n_sites) {
    std::vector<double> occ(static_cast<std::size_t>(n_sites), 0.0);
    for (std::size_t s = 0; s < psi.size(); ++s) {
        const double p = std::norm(psi[s]);
        if (p == 0) continue;
        for (int i = 0; i < n_sites; ++i)
            if ((s >> i) & 1u) occ[static_cast<std::size_t>(i)] += p;
    }
    return occ;
}

std::vector<Snapshot> sample_z_basis(const State& psi, int n_sites, int shots, std::uint64_t seed) {
    rng::Engine eng(seed);
    std::vector<double> cdf(psi.size());
    double acc = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) {
        acc += std::norm(psi[i]);
        cdf[i] = acc;
    }
    std::vector<Snapshot> out;
    out.reserve(static_cast<std::size_t>(shots));
    for (int m = 0; m < shots; ++m) {
        const std::size_t s = eng.from_cdf(cdf);
        Snapshot snap(static_cast<std::size_t>(n_sites));
        for (int i = 0; i < n_sites; ++i) snap[static_cast<std::size_t>(i)] = (s >> i) & 1u;
        out.push_back(std::move(snap));
    }
    return out;
}

std::vector<Snapshot> sample_fixed_basis(const State& psi, int n_sites, char basis, int shots,
                                         std::uint64_t seed) {
    State rotated = psi;
    const Pauli p = basis == 'x' ? Pauli::X : basis == 'y' ? Pauli::Y : Pauli::Z;
    if (basis != 'z')
        for (int q = 0; q < n_sites; ++q) rotate_to_basis(rotated, q, p);
    return sample_z_basis(rotated, n_sites, shots, seed);
}

std::vector<Snapshot> sample_shadows(const State& psi, int n_sites, int shots, std::uint64_t seed) {
    rng::Engine eng(seed);
    std::vector<Snapshot> out;
    out.reserve(static_cast<std::size_t>(shots));
    State work;
    std::vector<double> cdf;
    for (int m = 0; m < shots; ++m) {
        work = psi;
        Snapshot rec(static_cast<std::size_t>(2 * n_sites));
        for (int q = 0; q < n_sites; ++q) {
            const auto b = static_cast<Pauli>(eng.below(3));
            rec[static_cast<std::size_t>(2 * q)] = static_cast<double>(b);
            rotate_to_basis(work, q, b);
        }
        Snapshot bits = born_sample(work, n_sites, eng, cdf);
        for (int q = 0; q < n_sites; ++q)
            rec[static_cast<std::size_t>(2 * q + 1)] = bits[static_cast<std::size_t>(q)];
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace qdisc::qsim
