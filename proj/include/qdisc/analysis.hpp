#pragma once

#include <cstdint>
#include <vector>

#include "qdisc/dataset.hpp"
#include "qdisc/shadows.hpp"
#include "qdisc/vae.hpp"

namespace qdisc::analysis {

// correlators over +-1 spins (bit b -> 1 - 2b)
double nn_correlator(const std::vector<qsim::Snapshot>& snapshots, const qsim::Geometry& geometry);
double nnn_correlator(const std::vector<qsim::Snapshot>& snapshots, const qsim::Geometry& geometry);

// nonlocal string correlator sigma_z_i (prod_x) sigma_z_j, 0-indexed sites
double string_order_state(const qsim::State& psi, int i, int j);
shadows::Estimate string_order_shadows(const shadows::ShadowEnsemble& ensemble, int i, int j,
                                       int k_groups);
qsim::PauliTerm string_order_observable(int i, int j);

// corner order parameter on occupancy snapshots (square lattice):
// f = mean over corners of x1*x4 + 2*x2*x3 with x1 the corner, x2/x3 its two
// edge neighbors, x4 the diagonal neighbor; f_tilde subtracts the
// occupancy-variable NN correlator over bonds not touching a corner
struct CornerOrder {
    double f = 0;
    double f_tilde = 0;
    double bulk_edge_nn = 0;
};
CornerOrder corner_order(const std::vector<qsim::Snapshot>& snapshots, int lx, int ly);

// histogram of maximal runs of equal consecutive outcomes along a chain
struct BubbleDistribution {
    std::vector<double> p;  // p[s-1] = P(s), normalized
    std::vector<std::int64_t> counts;
    std::int64_t total = 0;
};
BubbleDistribution x_bubble_distribution(const std::vector<qsim::Snapshot>& snapshots);

struct FitResult {
    double exponent = 0;   // eta (power law) or -1/xi slope parameter (exponential)
    double scale = 0;      // xi for the exponential form
    double amplitude = 0;  // prefactor
    double r2 = 0;         // in the original P(s) space
    double rmse = 0;
    bool reliable = true;  // >= 4 nonzero support bins
};
FitResult fit_power_law(const BubbleDistribution& p);
FitResult fit_exponential(const BubbleDistribution& p);

// inverse participation ratio over conditional probabilities
double ipr_from_cp(const std::vector<double>& probabilities);

struct FdRepulsionMap {
    std::vector<double> cp_product;      // per grid point: site-avg p(f=1) * mu_d
    std::vector<double> raw_correlator;  // per grid point: <(f-1/2)(d-1/2)>
};
FdRepulsionMap fd_repulsion_map(const vae::VaeModel& model, const data::Dataset& dataset);

}  // namespace qdisc::analysis
