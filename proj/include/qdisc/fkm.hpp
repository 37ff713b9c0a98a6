#pragma once

#include <cstdint>
#include <vector>

namespace qdisc::fkm {

// One Monte Carlo record: localized f occupations (0/1) and itinerant
// d-fermion densities <n_d,i> in [0,1], both over row-major lattice sites.
struct Record {
    std::vector<std::uint8_t> f;
    std::vector<double> d_density;
};

struct Options {
    int burnin_sweeps = -1;  // default 10*N
    int flips_per_record = -1;  // default N (one sweep)
    bool periodic = true;
};

// Metropolis over f configurations of the half-filled spinless model on an
// L x L lattice: weight exp(-E0(f)/T) * prod_k (1 + exp(-eps_k/T)) with
// eps_k the eigenvalues of h = -t * adjacency + U (n_f - 1/2) on the diagonal,
// t = 1, chemical potential 0. Burn-in anneals from max(T, 0.5) down to T so
// low-temperature chains do not freeze in the random start.
std::vector<Record> sample(int L, double U, double T, int n_records, std::uint64_t seed,
                           const Options& opts = {});

// log of the stationary weight; exposed so tests can enumerate it independently
double log_weight(int L, double U, double T, const std::vector<std::uint8_t>& f, bool periodic);

// staggered (-1)^(x+y) (n_f - 1/2) order parameter in [0, 1]
double staggered_f_order(const std::vector<std::uint8_t>& f, int L);

}  // namespace qdisc::fkm
