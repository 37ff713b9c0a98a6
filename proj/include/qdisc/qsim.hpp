#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "qdisc/errors.hpp"

namespace qdisc::qsim {

enum class Pauli : std::uint8_t { X = 0, Y = 1, Z = 2 };

struct PauliOp {
    int site;
    Pauli p;
};

// coefficient * product of single-site Paulis; empty ops list = identity
struct PauliTerm {
    double coefficient = 0.0;
    std::vector<PauliOp> ops;
};

struct Geometry {
    enum class Kind { Chain, Square } kind = Kind::Chain;
    int lx = 0;  // columns (chain: N)
    int ly = 1;  // rows
};

struct SpinHamiltonian {
    int n_sites = 0;
    std::vector<PauliTerm> terms;
    Geometry geometry;
};

// site (row, col) -> flat index: even rows left-to-right, odd rows reversed,
// starting at the top-left corner
int snake_order(int row, int col, int lx);
// number of rows implied by a snake walk is not needed; inverse for a full lattice:
std::vector<int> snake_permutation(int lx, int ly);  // perm[snake_idx] = row-major idx

SpinHamiltonian build_j1j2(int L, double j2, double h);
SpinHamiltonian build_cluster_ising(int n, double h1, double h2);
SpinHamiltonian build_rydberg(int lx, int ly, double rb_over_a, double delta_over_omega);

using State = std::vector<std::complex<double>>;

struct GroundState {
    double energy = 0.0;
    State psi;
};

// Dense solve for N <= 12, Lanczos (full reorthogonalization) above. Global
// phase fixed by making the largest-magnitude amplitude real positive.
enum class Solver { Auto, Dense, Lanczos };
GroundState ground_state(const SpinHamiltonian& h, Solver solver = Solver::Auto);

// out += H * in (complex matvec through the term list)
void apply_hamiltonian(const SpinHamiltonian& h, const State& in, State& out);

double expectation(const State& psi, const std::vector<PauliTerm>& observable);
double expectation(const State& psi, const PauliTerm& observable);

// per-site occupation <n_i> with n = (1 - sigma_z)/2, bit 1 = occupied
std::vector<double> site_occupations(const State& psi, int n_sites);

// Projective snapshots. Entries are doubles so every dataset kind shares one
// record type; discrete samplers emit exact 0/1 (and 0/1/2 basis labels).
using Snapshot = std::vector<double>;

std::vector<Snapshot> sample_z_basis(const State& psi, int n_sites, int shots, std::uint64_t seed);

// every site measured in the same Pauli basis ('z', 'x' or 'y')
std::vector<Snapshot> sample_fixed_basis(const State& psi, int n_sites, char basis, int shots,
                                         std::uint64_t seed);

// randomized Pauli measurements; records interleave (basis_i, outcome_i) with
// basis in {0,1,2} = {X,Y,Z}
std::vector<Snapshot> sample_shadows(const State& psi, int n_sites, int shots, std::uint64_t seed);

}  // namespace qdisc::qsim
