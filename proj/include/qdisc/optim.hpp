#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qdisc/nn.hpp"
#include "qdisc/tensor.hpp"

namespace qdisc::optim {

// AdaBelief: second moment tracks the variance of the gradient around its
// running mean rather than the raw second moment.
struct AdaBeliefConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-16;
};

class AdaBelief {
public:
    explicit AdaBelief(AdaBeliefConfig cfg = {}) : cfg_(cfg) {}

    // params and grads are index-aligned; names used in error messages.
    void step(std::vector<ad::Tensor*>& params, const std::vector<const std::vector<double>*>& grads,
              const std::vector<std::string>* names = nullptr);

    // convenience for a ParamSet bound to a tape after backward()
    void step(nn::ParamSet& ps, nn::Bound& bd, ad::Tape& tape);

    std::int64_t step_count() const { return step_count_; }
    const AdaBeliefConfig& config() const { return cfg_; }

private:
    AdaBeliefConfig cfg_;
    std::int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_, s_;
};

// L-BFGS with strong-Wolfe line search (memory m = 10 by default).
// Objective fills `grad` and returns the value.
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

struct LbfgsOptions {
    int memory = 10;
    int max_iterations = 200;
    double gradient_tolerance = 1e-8;
    // optional box constraints; enforced by projection
    std::optional<std::vector<double>> lower;
    std::optional<std::vector<double>> upper;
};

struct LbfgsResult {
    std::vector<double> x;
    double fx = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

LbfgsResult lbfgs_minimize(const Objective& objective, std::vector<double> init,
                           const LbfgsOptions& opts = {});

}  // namespace qdisc::optim
