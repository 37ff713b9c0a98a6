#include "qdisc/nn.hpp"

#include <cmath>

namespace qdisc::nn {

using ad::Tape;
using ad::Tensor;

ad::Tensor& ParamSet::create(const std::string& name, ad::Shape shape, rng::Engine& eng,
                             double stddev) {
    if (index_.count(name)) throw ConfigError("parameter already registered: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, Tensor::randn(std::move(shape), eng, stddev));
    return params_.back().second;
}

ad::Tensor& ParamSet::create_zeros(const std::string& name, ad::Shape shape) {
    return create_full(name, std::move(shape), 0.0);
}

ad::Tensor& ParamSet::create_full(const std::string& name, ad::Shape shape, double value) {
    if (index_.count(name)) throw ConfigError("parameter already registered: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, Tensor::full(std::move(shape), value));
    return params_.back().second;
}

ad::Tensor& ParamSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second].second;
}

const ad::Tensor& ParamSet::get(const std::string& name) const {
    return const_cast<ParamSet*>(this)->get(name);
}

std::int64_t ParamSet::total_size() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.second.size();
    return n;
}

std::size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

ad::Tape::Id Bound::operator[](const std::string& name) const {
    return ids[ps->index_of(name)];
}

Bound bind(const ParamSet& ps, ad::Tape& tape, bool requires_grad) {
    Bound bd;
    bd.tape = &tape;
    bd.ps = &ps;
    bd.ids.reserve(ps.count());
    for (std::size_t i = 0; i < ps.count(); ++i)
        bd.ids.push_back(tape.leaf(ps.tensor(i), requires_grad));
    return bd;
}

Dense::Dense(ParamSet& ps, rng::Engine& eng, const std::string& prefix, std::int64_t in_,
             std::int64_t out_)
    : w(prefix + ".w"), b(prefix + ".b"), in(in_), out(out_) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ + out_));
    ps.create(w, {in_, out_}, eng, stddev);
    ps.create_zeros(b, {out_});
}

ad::Tape::Id Dense::apply(ad::Tape& t, const Bound& bd, ad::Tape::Id x) const {
    const ad::Shape xs = t.val(x).shape;
    ad::Tape::Id flat = reshape(t, x, {-1, in});
    ad::Tape::Id y = add(t, matmul(t, flat, bd[w]), bd[b]);
    ad::Shape os(xs.begin(), xs.end() - 1);
    os.push_back(out);
    return reshape(t, y, os);
}

LayerNorm::LayerNorm(ParamSet& ps, const std::string& prefix, std::int64_t dim)
    : gain(prefix + ".gain"), bias(prefix + ".bias") {
    ps.create_full(gain, {dim}, 1.0);
    ps.create_zeros(bias, {dim});
}

ad::Tape::Id LayerNorm::apply(ad::Tape& t, const Bound& bd, ad::Tape::Id x) const {
    return layer_norm(t, x, bd[gain], bd[bias]);
}

MultiHeadAttention::MultiHeadAttention(ParamSet& ps, rng::Engine& eng, const std::string& prefix,
                                       std::int64_t d, int h)
    : q(ps, eng, prefix + ".q", d, d),
      k(ps, eng, prefix + ".k", d, d),
      v(ps, eng, prefix + ".v", d, d),
      o(ps, eng, prefix + ".o", d, d),
      heads(h),
      d_model(d) {
    if (d % h != 0) throw ConfigError("attention: d_model not divisible by heads");
}

namespace {

// (B, I, d) -> (B, H, I, dh)
ad::Tape::Id split_heads(Tape& t, ad::Tape::Id x, int heads) {
    const auto& s = t.val(x).shape;
    const std::int64_t B = s[0], I = s[1], d = s[2];
    ad::Tape::Id r = reshape(t, x, {B, I, heads, d / heads});
    return permute(t, r, {0, 2, 1, 3});
}

// (B, H, I, dh) -> (B, I, d)
ad::Tape::Id merge_heads(Tape& t, ad::Tape::Id x) {
    const auto& s = t.val(x).shape;
    const std::int64_t B = s[0], H = s[1], I = s[2], dh = s[3];
    ad::Tape::Id p = permute(t, x, {0, 2, 1, 3});
    return reshape(t, p, {B, I, H * dh});
}

}  // namespace

ad::Tape::Id MultiHeadAttention::self_attention(Tape& t, const Bound& bd, ad::Tape::Id x,
                                                bool causal) const {
    ad::Tape::Id Q = split_heads(t, q.apply(t, bd, x), heads);
    ad::Tape::Id Kk = split_heads(t, k.apply(t, bd, x), heads);
    ad::Tape::Id V = split_heads(t, v.apply(t, bd, x), heads);
    const double scl = 1.0 / std::sqrt(static_cast<double>(d_model / heads));
    ad::Tape::Id scores = scale(t, matmul(t, Q, transpose_last2(t, Kk)), scl);
    ad::Tape::Id p = causal ? causal_softmax(t, scores) : softmax_last(t, scores);
    ad::Tape::Id ctx = matmul(t, p, V);
    return o.apply(t, bd, merge_heads(t, ctx));
}

ad::Tape::Id MultiHeadAttention::cross_attention(Tape& t, const Bound& bd, ad::Tape::Id x,
                                                 ad::Tape::Id c) const {
    ad::Tape::Id Q = split_heads(t, q.apply(t, bd, x), heads);
    ad::Tape::Id Kk = split_heads(t, k.apply(t, bd, c), heads);
    ad::Tape::Id V = split_heads(t, v.apply(t, bd, c), heads);
    const double scl = 1.0 / std::sqrt(static_cast<double>(d_model / heads));
    ad::Tape::Id scores = scale(t, matmul(t, Q, transpose_last2(t, Kk)), scl);
    ad::Tape::Id p = softmax_last(t, scores);
    ad::Tape::Id ctx = matmul(t, p, V);
    return o.apply(t, bd, merge_heads(t, ctx));
}

ad::Tensor positional_encoding(std::int64_t length, std::int64_t d_model) {
    Tensor pe = Tensor::zeros({length, d_model});
    for (std::int64_t pos = 0; pos < length; ++pos) {
        for (std::int64_t i = 0; i < d_model; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
            pe.at({pos, i}) = std::sin(angle);
            if (i + 1 < d_model) pe.at({pos, i + 1}) = std::cos(angle);
        }
    }
    return pe;
}

MadeMasks made_masks(std::int64_t n_sites, int n_cond, const std::vector<std::int64_t>& hidden_sizes,
                     std::int64_t outputs_per_site) {
    // degree of input unit: 0 for the n_cond conditioning units, then 1..N
    // hidden degrees cycle 1..N-1; a hidden unit of degree m sees inputs <= m
    // output units for site i (degree i) see hidden degrees < i
    if (n_sites < 1) throw ConfigError("made_masks: need at least one site");
    const std::int64_t dmax = std::max<std::int64_t>(1, n_sites - 1);
    std::vector<std::int64_t> prev_deg;
    for (int c = 0; c < n_cond; ++c) prev_deg.push_back(0);
    for (std::int64_t i = 1; i <= n_sites; ++i) prev_deg.push_back(i);

    MadeMasks masks;
    for (auto hsize : hidden_sizes) {
        std::vector<std::int64_t> deg(static_cast<std::size_t>(hsize));
        for (std::int64_t j = 0; j < hsize; ++j) deg[static_cast<std::size_t>(j)] = 1 + (j % dmax);
        Tensor m = Tensor::zeros({static_cast<std::int64_t>(prev_deg.size()), hsize});
        for (std::size_t i = 0; i < prev_deg.size(); ++i)
            for (std::int64_t j = 0; j < hsize; ++j)
                if (deg[static_cast<std::size_t>(j)] >= prev_deg[i])
                    m.at({static_cast<std::int64_t>(i), j}) = 1.0;
        masks.hidden.push_back(std::move(m));
        prev_deg = deg;
    }
    Tensor mo = Tensor::zeros(
        {static_cast<std::int64_t>(prev_deg.size()), n_sites * outputs_per_site});
    for (std::size_t j = 0; j < prev_deg.size(); ++j)
        for (std::int64_t i = 1; i <= n_sites; ++i)
            if (i > prev_deg[j])
                for (std::int64_t c = 0; c < outputs_per_site; ++c)
                    mo.at({static_cast<std::int64_t>(j), (i - 1) * outputs_per_site + c}) = 1.0;
    masks.output = std::move(mo);
    return masks;
}

}  // namespace qdisc::nn
