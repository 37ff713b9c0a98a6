#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "qdisc/tape.hpp"

namespace qdisc::nn {

// Named parameter store. Registration order is canonical: optimizer slots and
// checkpoint serialization both follow it.
class ParamSet {
public:
    ad::Tensor& create(const std::string& name, ad::Shape shape, rng::Engine& eng, double stddev);
    ad::Tensor& create_zeros(const std::string& name, ad::Shape shape);
    ad::Tensor& create_full(const std::string& name, ad::Shape shape, double value);

    ad::Tensor& get(const std::string& name);
    const ad::Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t count() const { return params_.size(); }
    std::size_t index_of(const std::string& name) const;
    const std::string& name(std::size_t i) const { return params_[i].first; }
    ad::Tensor& tensor(std::size_t i) { return params_[i].second; }
    const ad::Tensor& tensor(std::size_t i) const { return params_[i].second; }

    std::int64_t total_size() const;

private:
    std::vector<std::pair<std::string, ad::Tensor>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-step binding of every parameter into a tape.
struct Bound {
    ad::Tape* tape = nullptr;
    std::vector<ad::Tape::Id> ids;  // aligned with ParamSet order
    const ParamSet* ps = nullptr;

    ad::Tape::Id operator[](const std::string& name) const;
};

Bound bind(const ParamSet& ps, ad::Tape& tape, bool requires_grad = true);

// --- layers ---

struct Dense {
    std::string w, b;
    std::int64_t in = 0, out = 0;
    Dense() = default;
    Dense(ParamSet& ps, rng::Engine& eng, const std::string& prefix, std::int64_t in,
          std::int64_t out);
    ad::Tape::Id apply(ad::Tape& t, const Bound& bd, ad::Tape::Id x) const;
};

struct LayerNorm {
    std::string gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamSet& ps, const std::string& prefix, std::int64_t dim);
    ad::Tape::Id apply(ad::Tape& t, const Bound& bd, ad::Tape::Id x) const;
};

struct MultiHeadAttention {
    Dense q, k, v, o;
    int heads = 1;
    std::int64_t d_model = 0;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamSet& ps, rng::Engine& eng, const std::string& prefix,
                       std::int64_t d_model, int heads);
    // x (B, I, d); causal limits each position to itself and earlier ones
    ad::Tape::Id self_attention(ad::Tape& t, const Bound& bd, ad::Tape::Id x, bool causal) const;
    // queries from x (B, I, d), keys/values from ctx (B, L, d)
    ad::Tape::Id cross_attention(ad::Tape& t, const Bound& bd, ad::Tape::Id x,
                                 ad::Tape::Id ctx) const;
};

// Sinusoidal positional encoding table (I, d).
ad::Tensor positional_encoding(std::int64_t length, std::int64_t d_model);

// Autoregressive mask construction for masked feedforward (MADE-style) nets.
// Input degrees are 1..N (site order); conditioning inputs get degree 0 and
// therefore connect everywhere. Output for site i may only see degrees < i.
struct MadeMasks {
    std::vector<ad::Tensor> hidden;  // (in, out) multiplicative masks per hidden layer
    ad::Tensor output;               // (last_hidden, n_outputs)
};
MadeMasks made_masks(std::int64_t n_sites, int n_cond, const std::vector<std::int64_t>& hidden_sizes,
                     std::int64_t outputs_per_site);

}  // namespace qdisc::nn
