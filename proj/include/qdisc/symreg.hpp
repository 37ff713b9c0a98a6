#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qdisc/dataset.hpp"
#include "qdisc/vae.hpp"

namespace qdisc::sr {

// ---------------------------------------------------------------------------
// quadratic two-body ansatz f(x) = sum_{i<j} alpha_ij x_i x_j (+ constant)
// ---------------------------------------------------------------------------

struct TwoBodyAnsatz {
    int n = 0;
    std::vector<double> alpha;  // pairs (i,j), i<j, lexicographic
    double constant = 0.0;
    bool use_constant = false;
    bool converged = true;

    static int pair_count(int n) { return n * (n - 1) / 2; }
    static int pair_index(int n, int i, int j);
    static std::pair<int, int> pair_sites(int n, int k);

    double evaluate(const std::vector<double>& x) const;
    std::vector<double> gradient_x(const std::vector<double>& x) const;
};

// SR input mapping: z-basis spins to +-1 (b -> 1-2b), hybrid raw values
std::vector<double> sr_input(data::Kind kind, const qsim::Snapshot& snap);

// ---------------------------------------------------------------------------
// labeled sets from the latent representation
// ---------------------------------------------------------------------------

struct LabeledSet {
    std::vector<std::vector<double>> x_pos, x_neg;
    std::vector<std::size_t> point_pos, point_neg;  // grid point of each sample
};

struct ClusterPredicate {
    enum class Stat { MeanMu, MeanAbsMu } stat = Stat::MeanAbsMu;
    bool greater = true;
    double threshold = 0.0;

    bool pass(double value) const { return greater ? value > threshold : value < threshold; }
};

// inclusive grid-index rectangle
struct GridRegion {
    std::size_t row_lo = 0, row_hi = SIZE_MAX, col_lo = 0, col_hi = SIZE_MAX;
    bool contains(std::size_t r, std::size_t c) const {
        return r >= row_lo && r <= row_hi && c >= col_lo && c <= col_hi;
    }
};

// Positives: in-scope grid points passing the predicate on the chosen neuron
// statistic. Negatives: in-scope points failing it (or an explicit region).
// Points within `margin` Chebyshev cells of the in/out boundary are dropped.
LabeledSet select_cluster(const vae::LatentMap& map, const data::Dataset& dataset, int neuron,
                          const ClusterPredicate& pred, int margin, const GridRegion& scope = {},
                          const std::optional<GridRegion>& negative_region = std::nullopt,
                          int max_samples_per_point = 0);

// ---------------------------------------------------------------------------
// SR1: in/out classification with BCE (+ L1)
// ---------------------------------------------------------------------------

struct Sr1Options {
    double l1_weight = 0.0;
    bool use_constant = false;
    int restarts = 9;  // random restarts beyond the alpha = 0 start
    std::uint64_t seed = 0;
};

TwoBodyAnsatz sr1_fit(const LabeledSet& data, const Sr1Options& opts = {});
double bce_loss(const TwoBodyAnsatz& f, const LabeledSet& data);

// ---------------------------------------------------------------------------
// SR2 / SR3: gradient alignment
// ---------------------------------------------------------------------------

// boundary samples: raw snapshots near the cluster boundary
TwoBodyAnsatz sr2_fit(const std::vector<qsim::Snapshot>& boundary_samples,
                      const vae::VaeModel& model, int active_neuron, std::uint64_t seed = 0);

// small theta -> mu surrogate network
class SurrogateModel {
public:
    SurrogateModel(int in_dim, int hidden, std::uint64_t seed);

    double predict(const std::vector<double>& theta) const;
    std::vector<double> gradient(const std::vector<double>& theta) const;

    int input_dim() const { return in_dim_; }
    double holdout_r2 = 0.0;
    bool reliable = true;

    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

private:
    int in_dim_, hidden_;
    nn::ParamSet params_;
    friend SurrogateModel surrogate_train(const std::vector<std::vector<double>>&,
                                          const std::vector<double>&, std::uint64_t, int);
};

SurrogateModel surrogate_train(const std::vector<std::vector<double>>& thetas,
                               const std::vector<double>& targets, std::uint64_t seed = 0,
                               int hidden = 32);

// finite-difference projector v_k = (x_f - x_i) / (theta_f_k - theta_i_k)
std::vector<std::vector<double>> projector_fd(const std::vector<double>& x_i,
                                              const std::vector<double>& x_f,
                                              const std::vector<double>& theta_i,
                                              const std::vector<double>& theta_f);

// cp-based projector v_k = (d cp / d mu_i) (d mu_i / d theta_k), cp evaluated
// at z with the active neurons set to their surrogate values, passives zero
std::vector<std::vector<double>> projector_cp(
    const vae::VaeModel& model,
    const std::vector<std::pair<int, const SurrogateModel*>>& active,
    const std::vector<double>& theta);

struct Sr3Sample {
    std::vector<double> x_mean;               // mapped mean snapshot at theta
    std::vector<std::vector<double>> v;       // projector rows v[k]
    std::vector<double> surrogate_gradient;   // d g / d theta_k
};

TwoBodyAnsatz sr3_fit(const std::vector<Sr3Sample>& samples, int n_inputs, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// genetic expression search
// ---------------------------------------------------------------------------

enum class OpKind { Add, Sub, Mul, Div, Sin, Cos, Tanh, Exp, Log, Var, Const };

struct ExprNode {
    OpKind op = OpKind::Const;
    int child0 = -1, child1 = -1;
    double value = 0.0;  // Const
    int var = 0;         // Var
};

struct ExpressionTree {
    std::vector<ExprNode> nodes;
    int root = -1;

    int complexity() const;
    double evaluate(const std::vector<double>& x) const;
    std::string to_prefix() const;
};

struct GeneticOptions {
    std::vector<OpKind> operators = {OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div,
                                     OpKind::Sin, OpKind::Cos, OpKind::Tanh, OpKind::Exp,
                                     OpKind::Log};
    int complexity_budget = 25;
    int population = 200;
    int generations = 40;
    int tournament = 5;
    double parsimony = 0.001;
    std::uint64_t seed = 0;
    bool classification = true;  // BCE on sigmoid(f); else MSE regression
};

struct ParetoEntry {
    int complexity;
    double loss;
    ExpressionTree tree;
};

struct GeneticResult {
    ExpressionTree best;
    double best_loss = 0.0;
    std::vector<ParetoEntry> pareto;
};

GeneticResult genetic_search(const std::vector<std::vector<double>>& inputs,
                             const std::vector<double>& labels, const GeneticOptions& opts);

// g(r) regression over a chain ansatz: alpha_ij against r = j - i
struct CoefficientFit {
    ExpressionTree g;
    double mse = 0.0;
    std::vector<double> g_of_r;   // r = 1 .. N-1
    std::vector<int> sign_of_r;   // sign of g(r)
};

CoefficientFit fit_coefficient_function(const TwoBodyAnsatz& ansatz,
                                        const GeneticOptions& opts_in = {});

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

double normalize_order_parameter(double value, int n);
double spearman(const std::vector<double>& a, const std::vector<double>& b);
double auc(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

struct RobustnessRow {
    std::string name;
    double spearman_mean = 0, spearman_std = 0;
    double auc_mean = 0, auc_std = 0;
};

// reruns sr1_fit over `seeds` seeds per labeled set; the evaluator maps a
// fitted ansatz to (spearman, auc) in the caller's evaluation context
std::vector<RobustnessRow> robustness_protocol(
    const std::vector<std::pair<std::string, LabeledSet>>& shifted_sets, const Sr1Options& base,
    int seeds, const std::function<std::pair<double, double>(const TwoBodyAnsatz&)>& evaluator);

// prefix-notation export with metrics and provenance
std::string export_symbolic_result(const std::string& expression_prefix,
                                   const std::vector<std::pair<std::string, double>>& metrics,
                                   std::uint64_t dataset_hash, std::uint64_t seed);
std::string ansatz_to_prefix(const TwoBodyAnsatz& f);

}  // namespace qdisc::sr
