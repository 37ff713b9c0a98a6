#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qdisc/qsim.hpp"

namespace qdisc::shadows {

// One randomized-measurement record: per-site Pauli basis and +-1 outcome.
// Stored datasets keep outcomes as bits; the mapping is b = 1 - 2*bit.
struct ShadowRecord {
    std::vector<qsim::Pauli> basis;
    std::vector<int> outcome;  // +1 / -1
};

struct ShadowEnsemble {
    int n_sites = 0;
    std::vector<ShadowRecord> records;
};

// interleaved (basis, outcome-bit) snapshots -> ensemble
ShadowEnsemble from_snapshots(const std::vector<qsim::Snapshot>& snaps, int n_sites);

// per-site inverted estimator (1 + 3 b P)/2 as a 2x2 complex matrix
std::array<std::complex<double>, 4> single_shot_site(qsim::Pauli basis, int outcome);

// Tr[O rho_hat] for a Pauli-string observable: product over the string's
// sites of 3*b_i when the measured basis matches, else zero.
double pauli_single_shot(const ShadowRecord& rec, const qsim::PauliTerm& observable);

// split into K contiguous groups of floor(M/K) (remainder dropped), median of
// the group means; K = 1 reduces to the plain mean
double median_of_means(const std::vector<double>& values, int k_groups);

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;  // sample std of group means / sqrt(K)
};

Estimate estimate_observable(const ShadowEnsemble& ensemble, const qsim::PauliTerm& observable,
                             int k_groups);
// sum of per-term estimates (errors added in quadrature)
Estimate estimate_observable(const ShadowEnsemble& ensemble,
                             const std::vector<qsim::PauliTerm>& observable, int k_groups);

// observable mini-language: "Z1 X2 Z3" (1-indexed sites, case-insensitive)
qsim::PauliTerm parse_observable(const std::string& text, int n_sites);

}  // namespace qdisc::shadows
