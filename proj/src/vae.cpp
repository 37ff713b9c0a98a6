#include "qdisc/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace qdisc::vae {

using ad::Tape;
using ad::Tensor;
using Id = ad::Tape::Id;
using nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLogSigmaMin = -6.907755278982137;  // log(1e-3)
constexpr double kLogSigmaMax = 0.0;                 // log(1)

}  // namespace

std::string encoder_name(EncoderKind k) {
    switch (k) {
        case EncoderKind::Transformer: return "transformer";
        case EncoderKind::Convolutional: return "convolutional";
        case EncoderKind::Feedforward: return "feedforward";
    }
    return "?";
}

std::string decoder_name(DecoderKind k) {
    return k == DecoderKind::Transformer ? "transformer" : "masked-feedforward";
}

EncoderKind encoder_from_name(const std::string& s) {
    if (s == "transformer") return EncoderKind::Transformer;
    if (s == "convolutional") return EncoderKind::Convolutional;
    if (s == "feedforward") return EncoderKind::Feedforward;
    throw ConfigError("unknown encoder kind: " + s);
}

DecoderKind decoder_from_name(const std::string& s) {
    if (s == "transformer") return DecoderKind::Transformer;
    if (s == "masked-feedforward") return DecoderKind::MaskedFeedforward;
    throw ConfigError("unknown decoder kind: " + s);
}

void ArchitectureConfig::validate() const {
    if (n_sites < 1) throw ConfigError("architecture: n_sites must be >= 1");
    if (latent_dim < 1) throw ConfigError("architecture: latent_dim must be >= 1");
    const int expect = kind == data::Kind::ZBasis ? n_sites : 2 * n_sites;
    if (input_length != expect)
        throw ConfigError("architecture: input_length " + std::to_string(input_length) +
                          " does not match kind (expected " + std::to_string(expect) + ")");
    if (d_model_encoder % heads_encoder != 0 || d_model_decoder % heads_decoder != 0)
        throw ConfigError("architecture: d_model not divisible by heads");
    if (decoder == DecoderKind::MaskedFeedforward && kind != data::Kind::ZBasis)
        throw ConfigError("architecture: masked-feedforward decoder supports z-basis data only");
    if (encoder == EncoderKind::Convolutional &&
        (lattice_lx < 2 || lattice_lx != lattice_ly || lattice_lx * lattice_ly != n_sites))
        throw ConfigError("architecture: convolutional encoder needs a square lattice");
    if (snake_ordering && lattice_lx * lattice_ly != n_sites)
        throw ConfigError("architecture: snake ordering needs lattice dims");
}

std::string ArchitectureConfig::to_json() const {
    json j;
    j["encoder"] = encoder_name(encoder);
    j["decoder"] = decoder_name(decoder);
    j["kind"] = data::kind_name(kind);
    j["n_sites"] = n_sites;
    j["input_length"] = input_length;
    j["latent_dim"] = latent_dim;
    j["d_model_encoder"] = d_model_encoder;
    j["d_model_decoder"] = d_model_decoder;
    j["heads_encoder"] = heads_encoder;
    j["heads_decoder"] = heads_decoder;
    j["n_layers"] = n_layers;
    j["conv_channels"] = conv_channels;
    j["made_hidden"] = made_hidden;
    j["ff_hidden"] = ff_hidden;
    j["lattice_lx"] = lattice_lx;
    j["lattice_ly"] = lattice_ly;
    j["snake_ordering"] = snake_ordering;
    return j.dump();
}

ArchitectureConfig ArchitectureConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ArchitectureConfig c;
    c.encoder = encoder_from_name(j.at("encoder").get<std::string>());
    c.decoder = decoder_from_name(j.at("decoder").get<std::string>());
    c.kind = data::kind_from_name(j.at("kind").get<std::string>());
    c.n_sites = j.at("n_sites").get<int>();
    c.input_length = j.at("input_length").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.d_model_encoder = j.at("d_model_encoder").get<int>();
    c.d_model_decoder = j.at("d_model_decoder").get<int>();
    c.heads_encoder = j.at("heads_encoder").get<int>();
    c.heads_decoder = j.at("heads_decoder").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.conv_channels = j.at("conv_channels").get<int>();
    c.made_hidden = j.at("made_hidden").get<std::vector<std::int64_t>>();
    c.ff_hidden = j.at("ff_hidden").get<int>();
    c.lattice_lx = j.at("lattice_lx").get<int>();
    c.lattice_ly = j.at("lattice_ly").get<int>();
    c.snake_ordering = j.at("snake_ordering").get<bool>();
    return c;
}

ArchitectureConfig ArchitectureConfig::for_dataset(const data::Dataset& d) {
    ArchitectureConfig c;
    c.kind = d.kind;
    c.n_sites = d.n_sites;
    c.input_length = d.kind == data::Kind::ZBasis ? d.n_sites : 2 * d.n_sites;
    c.lattice_lx = d.geometry.lx;
    c.lattice_ly = d.geometry.kind == qsim::Geometry::Kind::Square ? d.geometry.ly : 1;
    if (d.system == "j1j2") {
        c.encoder = EncoderKind::Convolutional;
        c.decoder = DecoderKind::MaskedFeedforward;
        c.snake_ordering = true;
    } else if (d.system == "rydberg") {
        c.encoder = EncoderKind::Transformer;
        c.decoder = DecoderKind::Transformer;
        c.d_model_encoder = 8;
        c.heads_encoder = 4;
        c.d_model_decoder = 8;
        c.heads_decoder = 4;
        c.snake_ordering = true;
    } else {
        c.encoder = EncoderKind::Transformer;
        c.decoder = DecoderKind::Transformer;
        c.d_model_encoder = 16;
        c.heads_encoder = 2;
        c.d_model_decoder = 32;
        c.heads_decoder = 4;
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// model construction
// ---------------------------------------------------------------------------

VaeModel::VaeModel(ArchitectureConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    rng::Engine eng(rng::derive(seed, 0xa11c));
    const int I = cfg_.input_length;
    const int Z = cfg_.latent_dim;

    // sequence ordering over dataset entries
    order_.resize(static_cast<std::size_t>(I));
    if (cfg_.kind == data::Kind::ZBasis && cfg_.snake_ordering) {
        const auto perm = qsim::snake_permutation(cfg_.lattice_lx, cfg_.lattice_ly);
        for (int i = 0; i < I; ++i) order_[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)];
    } else {
        for (int i = 0; i < I; ++i) order_[static_cast<std::size_t>(i)] = i;
    }
    switch (cfg_.kind) {
        case data::Kind::ZBasis:
            predicted_entries_ = order_;
            break;
        case data::Kind::Shadows:
            for (int i = 0; i < cfg_.n_sites; ++i) predicted_entries_.push_back(2 * i + 1);
            break;
        case data::Kind::FkmHybrid:
            for (int i = 0; i < I; ++i) predicted_entries_.push_back(i);
            break;
    }

    // encoder parameters
    const int de = cfg_.d_model_encoder;
    switch (cfg_.encoder) {
        case EncoderKind::Transformer: {
            if (cfg_.kind == data::Kind::FkmHybrid)
                nn::Dense(params_, eng, "enc.valembed", 1, de);
            else
                params_.create("enc.embed", {cfg_.vocab(), de}, eng, 0.5);
            for (int l = 0; l < cfg_.n_layers; ++l) {
                const std::string p = "enc.l" + std::to_string(l);
                nn::LayerNorm(params_, p + ".ln1", de);
                nn::MultiHeadAttention(params_, eng, p + ".attn", de, cfg_.heads_encoder);
                nn::Dense(params_, eng, p + ".mlp1", de, 4 * de);
                nn::Dense(params_, eng, p + ".mlp2", 4 * de, de);
                nn::LayerNorm(params_, p + ".ln2", de);
            }
            nn::Dense(params_, eng, "enc.mu", I * de, Z);
            nn::Dense(params_, eng, "enc.logvar", I * de, Z);
            break;
        }
        case EncoderKind::Convolutional: {
            const int C = cfg_.conv_channels;
            params_.create("enc.conv1.w", {3, 3, 1, C}, eng, std::sqrt(2.0 / (9.0 + 9.0 * C)));
            params_.create_zeros("enc.conv1.b", {C});
            params_.create("enc.conv2.w", {3, 3, C, C}, eng, std::sqrt(2.0 / (9.0 * C * 2.0)));
            params_.create_zeros("enc.conv2.b", {C});
            nn::Dense(params_, eng, "enc.mu1", C, C);
            nn::Dense(params_, eng, "enc.mu2", C, Z);
            nn::Dense(params_, eng, "enc.lv1", C, C);
            nn::Dense(params_, eng, "enc.lv2", C, Z);
            break;
        }
        case EncoderKind::Feedforward: {
            const int h = cfg_.ff_hidden;
            nn::Dense(params_, eng, "enc.ff1", I, h);
            nn::Dense(params_, eng, "enc.ff2", h, h);
            nn::Dense(params_, eng, "enc.mu", h, Z);
            nn::Dense(params_, eng, "enc.logvar", h, Z);
            break;
        }
    }

    // prior-matched start: damp the latent heads so mu ~ 0, log sigma^2 ~ 0
    for (const char* head : {"enc.mu.w", "enc.logvar.w", "enc.mu2.w", "enc.lv2.w"})
        if (params_.has(head))
            for (auto& v : params_.get(head).data) v *= 0.1;

    // decoder parameters
    if (cfg_.decoder == DecoderKind::Transformer) {
        const int dd = cfg_.d_model_decoder;
        if (cfg_.kind == data::Kind::FkmHybrid)
            nn::Dense(params_, eng, "dec.valembed", 1, dd);
        else
            params_.create("dec.embed", {cfg_.vocab(), dd}, eng, 0.5);
        params_.create("dec.start", {dd}, eng, 0.5);
        nn::Dense(params_, eng, "dec.zctx", Z, I * dd);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "dec.l" + std::to_string(l);
            nn::LayerNorm(params_, p + ".ln1", dd);
            nn::MultiHeadAttention(params_, eng, p + ".causal", dd, cfg_.heads_decoder);
            nn::MultiHeadAttention(params_, eng, p + ".cross", dd, cfg_.heads_decoder);
            nn::Dense(params_, eng, p + ".mlp1", dd, 4 * dd);
            nn::Dense(params_, eng, p + ".mlp2", 4 * dd, dd);
            nn::LayerNorm(params_, p + ".ln2", dd);
        }
        if (cfg_.kind == data::Kind::FkmHybrid) {
            nn::Dense(params_, eng, "dec.fhead1", dd, dd);
            nn::Dense(params_, eng, "dec.fhead2", dd, 2);
            nn::Dense(params_, eng, "dec.dhead1", dd, dd);
            nn::Dense(params_, eng, "dec.dhead2", dd, 2);
        } else {
            nn::Dense(params_, eng, "dec.out", dd, 2);
        }
    } else {
        const int N = cfg_.n_sites;
        made_.push_back(nn::made_masks(N, Z, cfg_.made_hidden, 2));
        std::int64_t prev = Z + N;
        for (std::size_t k = 0; k < cfg_.made_hidden.size(); ++k) {
            nn::Dense(params_, eng, "made.h" + std::to_string(k), prev, cfg_.made_hidden[k]);
            prev = cfg_.made_hidden[k];
        }
        nn::Dense(params_, eng, "made.out", prev, 2 * N);
    }
}

// ---------------------------------------------------------------------------
// graph construction
// ---------------------------------------------------------------------------

struct GraphBuilder {
    const VaeModel& m;
    Tape& t;
    nn::Bound bd;

    GraphBuilder(const VaeModel& model, Tape& tape, bool requires_grad)
        : m(model), t(tape), bd(nn::bind(model.params(), tape, requires_grad)) {}

    const ArchitectureConfig& cfg() const { return m.config(); }

    // batch -> (B, I) raw values in sequence order
    Tensor seq_values(const std::vector<qsim::Snapshot>& batch) const {
        const int I = cfg().input_length;
        Tensor x = Tensor::zeros({static_cast<std::int64_t>(batch.size()), I});
        for (std::size_t b = 0; b < batch.size(); ++b) {
            if (batch[b].size() != static_cast<std::size_t>(I))
                throw ShapeError("vae: snapshot length " + std::to_string(batch[b].size()) +
                                 " does not match input length " + std::to_string(I));
            for (int i = 0; i < I; ++i)
                x.data[b * static_cast<std::size_t>(I) + static_cast<std::size_t>(i)] =
                    batch[b][static_cast<std::size_t>(m.entry_order()[static_cast<std::size_t>(i)])];
        }
        return x;
    }

    // continuous encoder input (spins mapped to +-1 for z-basis data)
    Tensor encoder_input(const std::vector<qsim::Snapshot>& batch) const {
        const auto& c = cfg();
        if (c.encoder == EncoderKind::Convolutional) {
            Tensor x = Tensor::zeros({static_cast<std::int64_t>(batch.size()), c.lattice_ly,
                                      c.lattice_lx, 1});
            for (std::size_t b = 0; b < batch.size(); ++b)
                for (int i = 0; i < c.n_sites; ++i)
                    x.data[b * static_cast<std::size_t>(c.n_sites) + static_cast<std::size_t>(i)] =
                        1.0 - 2.0 * batch[b][static_cast<std::size_t>(i)];
            return x;
        }
        Tensor x = seq_values(batch);
        if (c.encoder == EncoderKind::Feedforward && c.kind == data::Kind::ZBasis)
            for (auto& v : x.data) v = 1.0 - 2.0 * v;
        return x;
    }

    std::pair<Id, Id> encoder_graph(Id x) {
        const auto& c = cfg();
        switch (c.encoder) {
            case EncoderKind::Transformer: return transformer_encoder(x);
            case EncoderKind::Convolutional: return conv_encoder(x);
            case EncoderKind::Feedforward: return ff_encoder(x);
        }
        throw ConfigError("vae: unknown encoder");
    }

    std::pair<Id, Id> transformer_encoder(Id x) {
        const auto& c = cfg();
        const int de = c.d_model_encoder;
        const std::int64_t B = t.val(x).dim(0);
        Id h;
        if (c.kind == data::Kind::FkmHybrid) {
            nn::Dense emb{};
            emb.w = "enc.valembed.w";
            emb.b = "enc.valembed.b";
            emb.in = 1;
            emb.out = de;
            h = emb.apply(t, bd, reshape(t, x, {B, c.input_length, 1}));
        } else {
            h = ad::embedding(t, bd["enc.embed"], t.val(x));
        }
        Id pe = t.leaf(nn::positional_encoding(c.input_length, de), false);
        h = add(t, h, pe);
        for (int l = 0; l < c.n_layers; ++l) {
            const std::string p = "enc.l" + std::to_string(l);
            h = encoder_layer(h, p, de, c.heads_encoder);
        }
        Id flat = reshape(t, h, {B, static_cast<std::int64_t>(c.input_length) * de});
        Id mu = dense(flat, "enc.mu", c.input_length * de, c.latent_dim);
        Id lv = dense(flat, "enc.logvar", c.input_length * de, c.latent_dim);
        return {mu, lv};
    }

    Id encoder_layer(Id x, const std::string& p, int d, int heads) {
        nn::LayerNorm ln1{}, ln2{};
        ln1.gain = p + ".ln1.gain";
        ln1.bias = p + ".ln1.bias";
        ln2.gain = p + ".ln2.gain";
        ln2.bias = p + ".ln2.bias";
        nn::MultiHeadAttention attn = mha(p + ".attn", d, heads);
        Id y = ln1.apply(t, bd, x);
        Id a = attn.self_attention(t, bd, y, /*causal=*/false);
        Id x1 = add(t, x, a);
        Id hmid = relu(t, dense(x1, p + ".mlp1", d, 4 * d));
        Id h2 = dense(hmid, p + ".mlp2", 4 * d, d);
        Id x2 = add(t, x1, h2);
        return ln2.apply(t, bd, x2);
    }

    std::pair<Id, Id> conv_encoder(Id x) {
        const auto& c = cfg();
        Id h = relu(t, ad::conv2d_circular(t, x, bd["enc.conv1.w"], bd["enc.conv1.b"]));
        h = relu(t, ad::conv2d_circular(t, h, bd["enc.conv2.w"], bd["enc.conv2.b"]));
        // global average pooling over the lattice
        const std::int64_t B = t.val(h).dim(0);
        h = reshape(t, h, {B, static_cast<std::int64_t>(c.n_sites), c.conv_channels});
        Id pooled = mean_axis(t, h, 1);
        Id mu = dense(relu(t, dense(pooled, "enc.mu1", c.conv_channels, c.conv_channels)),
                      "enc.mu2", c.conv_channels, c.latent_dim);
        Id lv = dense(relu(t, dense(pooled, "enc.lv1", c.conv_channels, c.conv_channels)),
                      "enc.lv2", c.conv_channels, c.latent_dim);
        return {mu, lv};
    }

    std::pair<Id, Id> ff_encoder(Id x) {
        const auto& c = cfg();
        Id h = relu(t, dense(x, "enc.ff1", c.input_length, c.ff_hidden));
        h = relu(t, dense(h, "enc.ff2", c.ff_hidden, c.ff_hidden));
        Id mu = dense(h, "enc.mu", c.ff_hidden, c.latent_dim);
        Id lv = dense(h, "enc.logvar", c.ff_hidden, c.latent_dim);
        return {mu, lv};
    }

    struct DecodeOut {
        // (B, I, 2) log-probabilities for categorical slots (invalid entries
        // at non-categorical positions); hybrid adds Gaussian (B, I) heads
        Id cat_logp = -1;
        Id gauss_mu = -1;
        Id gauss_log_sigma = -1;
    };

    DecodeOut decoder_graph(const Tensor& x_seq, Id z) {
        if (cfg().decoder == DecoderKind::Transformer) return transformer_decoder(x_seq, z);
        return made_decoder(x_seq, z);
    }

    DecodeOut transformer_decoder(const Tensor& x_seq, Id z) {
        const auto& c = cfg();
        const int dd = c.d_model_decoder;
        const std::int64_t B = x_seq.dim(0);
        const std::int64_t I = c.input_length;
        Id h;
        if (c.kind == data::Kind::FkmHybrid) {
            Id xleaf = t.leaf(x_seq, false);
            h = dense(reshape(t, xleaf, {B, I, 1}), "dec.valembed", 1, dd);
        } else {
            h = ad::embedding(t, bd["dec.embed"], x_seq);
        }
        Id pe = t.leaf(nn::positional_encoding(I, dd), false);
        h = add(t, h, pe);
        // shift right, learned start token at position 0
        std::vector<std::int64_t> prefix(static_cast<std::size_t>(I - 1));
        for (std::int64_t i = 0; i + 1 < I; ++i) prefix[static_cast<std::size_t>(i)] = i;
        Id shifted_tail = gather_axis(t, h, 1, prefix);
        Id start = add(t, t.leaf(Tensor::zeros({B, 1, dd}), false), bd["dec.start"]);
        h = concat(t, {start, shifted_tail}, 1);
        // latent context sequence
        Id zc = reshape(t, dense(z, "dec.zctx", c.latent_dim, static_cast<int>(I) * dd), {B, I, dd});
        for (int l = 0; l < c.n_layers; ++l) {
            const std::string p = "dec.l" + std::to_string(l);
            nn::LayerNorm ln1{}, ln2{};
            ln1.gain = p + ".ln1.gain";
            ln1.bias = p + ".ln1.bias";
            ln2.gain = p + ".ln2.gain";
            ln2.bias = p + ".ln2.bias";
            nn::MultiHeadAttention causal = mha(p + ".causal", dd, c.heads_decoder);
            nn::MultiHeadAttention cross = mha(p + ".cross", dd, c.heads_decoder);
            Id y = ln1.apply(t, bd, h);
            Id a = causal.self_attention(t, bd, y, /*causal=*/true);
            Id cr = cross.cross_attention(t, bd, a, zc);
            Id x1 = add(t, h, cr);
            Id mid = relu(t, dense(x1, p + ".mlp1", dd, 4 * dd));
            Id m2 = dense(mid, p + ".mlp2", 4 * dd, dd);
            Id x2 = add(t, x1, m2);
            h = ln2.apply(t, bd, x2);
        }
        DecodeOut out;
        if (c.kind == data::Kind::FkmHybrid) {
            Id fh = dense(relu(t, dense(h, "dec.fhead1", dd, dd)), "dec.fhead2", dd, 2);
            out.cat_logp = log_softmax_last(t, fh);
            Id dh = dense(relu(t, dense(h, "dec.dhead1", dd, dd)), "dec.dhead2", dd, 2);
            Id mu_raw = reshape(t, gather_axis(t, dh, 2, {0}), {B, I});
            Id s_raw = reshape(t, gather_axis(t, dh, 2, {1}), {B, I});
            out.gauss_mu = sigmoid(t, mu_raw);
            out.gauss_log_sigma =
                add_const(t, scale(t, sigmoid(t, s_raw), kLogSigmaMax - kLogSigmaMin), kLogSigmaMin);
        } else {
            out.cat_logp = log_softmax_last(t, dense(h, "dec.out", dd, 2));
        }
        return out;
    }

    DecodeOut made_decoder(const Tensor& x_seq, Id z) {
        const auto& c = cfg();
        const std::int64_t B = x_seq.dim(0);
        const std::int64_t N = c.n_sites;
        Tensor xin = x_seq;
        for (auto& v : xin.data) v = 1.0 - 2.0 * v;  // spins as +-1
        Id x = t.leaf(xin, false);
        Id h = concat(t, {z, x}, 1);  // (B, Z + N)
        const auto& masks = m.masks().front();
        std::int64_t prev = c.latent_dim + N;
        for (std::size_t k = 0; k < c.made_hidden.size(); ++k) {
            const std::string p = "made.h" + std::to_string(k);
            Id mk = t.leaf(masks.hidden[k], false);
            Id wm = mul(t, bd[p + ".w"], mk);
            h = selu(t, add(t, matmul(t, h, wm), bd[p + ".b"]));
            prev = c.made_hidden[k];
        }
        (void)prev;
        Id mo = t.leaf(masks.output, false);
        Id wo = mul(t, bd["made.out.w"], mo);
        Id logits = add(t, matmul(t, h, wo), bd["made.out.b"]);
        DecodeOut out;
        out.cat_logp = log_softmax_last(t, reshape(t, logits, {B, N, 2}));
        return out;
    }

    // helpers that reference parameters by name without re-registering
    Id dense(Id x, const std::string& prefix, std::int64_t in, std::int64_t out_dim) {
        nn::Dense d{};
        d.w = prefix + ".w";
        d.b = prefix + ".b";
        d.in = in;
        d.out = out_dim;
        return d.apply(t, bd, x);
    }

    nn::MultiHeadAttention mha(const std::string& prefix, int d, int heads) const {
        nn::MultiHeadAttention a{};
        a.q.w = prefix + ".q.w";
        a.q.b = prefix + ".q.b";
        a.q.in = a.q.out = d;
        a.k.w = prefix + ".k.w";
        a.k.b = prefix + ".k.b";
        a.k.in = a.k.out = d;
        a.v.w = prefix + ".v.w";
        a.v.b = prefix + ".v.b";
        a.v.in = a.v.out = d;
        a.o.w = prefix + ".o.w";
        a.o.b = prefix + ".o.b";
        a.o.in = a.o.out = d;
        a.heads = heads;
        a.d_model = d;
        return a;
    }
};

const std::vector<nn::MadeMasks>& VaeModel::masks() const { return made_; }

// ---------------------------------------------------------------------------
// inference entry points
// ---------------------------------------------------------------------------

std::vector<LatentStats> VaeModel::encode(const std::vector<qsim::Snapshot>& batch) const {
    std::vector<LatentStats> out;
    out.reserve(batch.size());
    constexpr std::size_t kChunk = 2048;
    for (std::size_t start = 0; start < batch.size(); start += kChunk) {
        const std::size_t stop = std::min(batch.size(), start + kChunk);
        std::vector<qsim::Snapshot> chunk(batch.begin() + static_cast<std::ptrdiff_t>(start),
                                          batch.begin() + static_cast<std::ptrdiff_t>(stop));
        Tape tape;
        GraphBuilder gb(*this, tape, false);
        Id x = tape.leaf(gb.encoder_input(chunk), false);
        auto [mu, lv] = gb.encoder_graph(x);
        const Tensor& muv = tape.val(mu);
        const Tensor& lvv = tape.val(lv);
        ad::check_finite(muv, "encode");
        ad::check_finite(lvv, "encode");
        const int Z = cfg_.latent_dim;
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            LatentStats st;
            st.mu.assign(muv.data.begin() + static_cast<std::ptrdiff_t>(b * Z),
                         muv.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * Z));
            st.log_var.assign(lvv.data.begin() + static_cast<std::ptrdiff_t>(b * Z),
                              lvv.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * Z));
            out.push_back(std::move(st));
        }
    }
    return out;
}

namespace {

Tensor z_tensor(const std::vector<std::vector<double>>& z, std::size_t batch, int latent_dim) {
    if (z.size() != batch && z.size() != 1)
        throw ShapeError("vae: z batch size mismatch");
    Tensor zt = Tensor::zeros({static_cast<std::int64_t>(batch), latent_dim});
    for (std::size_t b = 0; b < batch; ++b) {
        const auto& row = z.size() == 1 ? z[0] : z[b];
        if (row.size() != static_cast<std::size_t>(latent_dim))
            throw ShapeError("vae: z dimension mismatch");
        for (int j = 0; j < latent_dim; ++j)
            zt.data[b * static_cast<std::size_t>(latent_dim) + static_cast<std::size_t>(j)] = row[static_cast<std::size_t>(j)];
    }
    return zt;
}

}  // namespace

std::vector<std::vector<SitePrediction>> VaeModel::decode_conditionals(
    const std::vector<std::vector<double>>& z, const std::vector<qsim::Snapshot>& batch) const {
    Tape tape;
    GraphBuilder gb(*this, tape, false);
    const Tensor x_seq = gb.seq_values(batch);
    Id zid = tape.leaf(z_tensor(z, batch.size(), cfg_.latent_dim), false);
    auto out = gb.decoder_graph(x_seq, zid);
    const int I = cfg_.decoder == DecoderKind::MaskedFeedforward ? cfg_.n_sites
                                                                 : cfg_.input_length;
    std::vector<std::vector<SitePrediction>> preds(batch.size());
    const Tensor& catv = tape.val(out.cat_logp);
    const Tensor* gmu = out.gauss_mu >= 0 ? &tape.val(out.gauss_mu) : nullptr;
    const Tensor* gls = out.gauss_log_sigma >= 0 ? &tape.val(out.gauss_log_sigma) : nullptr;
    // predictions are reported per predicted entry, in autoregressive order
    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto& rows = preds[b];
        rows.reserve(predicted_entries_.size());
        for (std::size_t k = 0; k < predicted_entries_.size(); ++k) {
            SitePrediction sp;
            int seq_pos = 0;
            switch (cfg_.kind) {
                case data::Kind::ZBasis: seq_pos = static_cast<int>(k); break;
                case data::Kind::Shadows: seq_pos = 2 * static_cast<int>(k) + 1; break;
                case data::Kind::FkmHybrid: seq_pos = static_cast<int>(k); break;
            }
            const bool gaussian =
                cfg_.kind == data::Kind::FkmHybrid && (seq_pos % 2 == 1);
            sp.gaussian = gaussian;
            if (gaussian) {
                sp.mu = gmu->data[b * static_cast<std::size_t>(cfg_.input_length) +
                                  static_cast<std::size_t>(seq_pos)];
                sp.log_sigma = gls->data[b * static_cast<std::size_t>(cfg_.input_length) +
                                         static_cast<std::size_t>(seq_pos)];
            } else {
                const std::size_t base =
                    (b * static_cast<std::size_t>(I) + static_cast<std::size_t>(
                        cfg_.decoder == DecoderKind::MaskedFeedforward ? static_cast<int>(k)
                                                                       : seq_pos)) *
                    2;
                sp.log_p[0] = catv.data[base];
                sp.log_p[1] = catv.data[base + 1];
            }
            rows.push_back(sp);
        }
    }
    return preds;
}

std::vector<qsim::Snapshot> VaeModel::generate_batch(
    const std::vector<std::vector<double>>& z, const std::vector<std::map<int, double>>& clamp,
    std::uint64_t seed) const {
    const std::size_t B = z.size();
    if (clamp.size() != B && !(clamp.size() == 1 && B >= 1))
        throw ConfigError("generate: clamp batch size mismatch");
    const int I = cfg_.input_length;
    // validate clamps
    for (const auto& cl : clamp) {
        for (const auto& [entry, value] : cl)
            if (entry < 0 || entry >= I)
                throw ConfigError("generate: clamp entry " + std::to_string(entry) +
                                  " out of range");
        if (cfg_.kind == data::Kind::Shadows)
            for (int i = 0; i < cfg_.n_sites; ++i)
                if (!cl.count(2 * i))
                    throw ConfigError("generate: shadow generation requires all basis slots clamped");
        (void)cl;
    }
    rng::Engine eng(rng::derive(seed, 0x9e11));
    // values in dataset layout, clamps applied up front
    std::vector<qsim::Snapshot> values(B, qsim::Snapshot(static_cast<std::size_t>(I), 0.0));
    for (std::size_t b = 0; b < B; ++b)
        for (const auto& [entry, value] : clamp[clamp.size() == 1 ? 0 : b])
            values[b][static_cast<std::size_t>(entry)] = value;

    const int steps = static_cast<int>(order_.size());
    for (int i = 0; i < steps; ++i) {
        const int entry = order_[static_cast<std::size_t>(i)];
        const bool predicted =
            std::find(predicted_entries_.begin(), predicted_entries_.end(), entry) !=
            predicted_entries_.end();
        if (!predicted) continue;  // clamped input slot (shadow bases)
        auto preds = decode_conditionals(z, values);
        const auto it = std::find(predicted_entries_.begin(), predicted_entries_.end(), entry);
        const std::size_t k = static_cast<std::size_t>(it - predicted_entries_.begin());
        for (std::size_t b = 0; b < B; ++b) {
            const auto& cl = clamp[clamp.size() == 1 ? 0 : b];
            if (cl.count(entry)) continue;
            const SitePrediction& sp = preds[b][k];
            double v;
            if (sp.gaussian) {
                v = sp.mu + std::exp(sp.log_sigma) * eng.normal();
                v = std::clamp(v, 0.0, 1.0);
            } else {
                const double p1 = std::exp(sp.log_p[1]);
                v = eng.uniform() < p1 ? 1.0 : 0.0;
            }
            values[b][static_cast<std::size_t>(entry)] = v;
        }
    }
    return values;
}

qsim::Snapshot VaeModel::generate(const std::vector<double>& z, const std::map<int, double>& clamp,
                                  std::uint64_t seed) const {
    return generate_batch({z}, {clamp}, seed)[0];
}

std::vector<std::vector<double>> VaeModel::conditional_probability_map(
    const std::vector<std::vector<double>>& z, const std::map<int, double>& clamp) const {
    const std::size_t B = z.size();
    const int I = cfg_.input_length;
    std::vector<qsim::Snapshot> values(B, qsim::Snapshot(static_cast<std::size_t>(I), 0.0));
    std::vector<std::vector<double>> result(B, std::vector<double>(static_cast<std::size_t>(I), 0.0));
    for (std::size_t b = 0; b < B; ++b)
        for (const auto& [entry, value] : clamp) {
            values[b][static_cast<std::size_t>(entry)] = value;
            result[b][static_cast<std::size_t>(entry)] = value;
        }
    const int steps = static_cast<int>(order_.size());
    for (int i = 0; i < steps; ++i) {
        const int entry = order_[static_cast<std::size_t>(i)];
        const auto it = std::find(predicted_entries_.begin(), predicted_entries_.end(), entry);
        if (it == predicted_entries_.end()) continue;
        const std::size_t k = static_cast<std::size_t>(it - predicted_entries_.begin());
        auto preds = decode_conditionals(z, values);
        for (std::size_t b = 0; b < B; ++b) {
            const SitePrediction& sp = preds[b][k];
            const bool clamped = clamp.count(entry) != 0;
            double record_value, feed_value;
            if (sp.gaussian) {
                record_value = sp.mu;
                feed_value = sp.mu;  // expected value
            } else {
                const double p1 = std::exp(sp.log_p[1]);
                record_value = p1;
                feed_value = cfg_.kind == data::Kind::FkmHybrid ? p1 : (p1 >= 0.5 ? 1.0 : 0.0);
            }
            if (!clamped) {
                result[b][static_cast<std::size_t>(entry)] = record_value;
                values[b][static_cast<std::size_t>(entry)] = feed_value;
            }
        }
    }
    return result;
}

std::vector<double> VaeModel::encoder_input_gradient(const qsim::Snapshot& x, int neuron) const {
    if (cfg_.encoder == EncoderKind::Transformer && cfg_.kind != data::Kind::FkmHybrid)
        throw ConfigError(
            "encoder_input_gradient: lookup-embedding encoders are not differentiable in their "
            "inputs");
    Tape tape;
    GraphBuilder gb(*this, tape, false);
    Id xid = tape.leaf(gb.encoder_input({x}), true);
    auto [mu, lv] = gb.encoder_graph(xid);
    (void)lv;
    Id target = sum_all(tape, gather_axis(tape, mu, 1, {neuron}));
    tape.backward(target);
    const Tensor& g = tape.grad(xid);
    std::vector<double> out(x.size(), 0.0);
    if (cfg_.encoder == EncoderKind::Convolutional) {
        // conv input is the row-major lattice image
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.data[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i)
            out[static_cast<std::size_t>(order_[i])] = g.data[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

std::vector<double> reparameterize(const LatentStats& stats, const std::vector<double>& eps) {
    if (stats.mu.size() != eps.size()) throw ShapeError("reparameterize: eps dimension mismatch");
    std::vector<double> z(stats.mu.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = stats.mu[i] + std::exp(0.5 * stats.log_var[i]) * eps[i];
    return z;
}

double loss_reconstruction_categorical(const std::vector<SitePrediction>& cp,
                                       const qsim::Snapshot& x) {
    if (cp.size() != x.size())
        throw ShapeError("categorical loss: prediction/target length mismatch");
    double loss = 0;
    for (std::size_t i = 0; i < cp.size(); ++i) {
        if (cp[i].gaussian) throw ShapeError("categorical loss: Gaussian slot in input");
        loss -= cp[i].log_p[static_cast<int>(x[i])];
    }
    return loss;
}

double loss_reconstruction_gaussian(double mu_d, double log_sigma_d, double d, bool standard_form) {
    const double sigma2 = std::exp(2.0 * log_sigma_d);
    const double log_term = standard_form ? 2.0 * log_sigma_d : log_sigma_d;
    return 0.5 * (log_term + (d - mu_d) * (d - mu_d) / sigma2 + kLog2Pi);
}

double kl_divergence(const LatentStats& stats) {
    double kl = 0;
    for (std::size_t j = 0; j < stats.mu.size(); ++j) {
        const double var = std::exp(stats.log_var[j]);
        kl += stats.mu[j] * stats.mu[j] + var - 1.0 - stats.log_var[j];
    }
    return 0.5 * kl;
}

namespace {

struct LossIds {
    Id total, recon, kl;
};

LossIds build_loss(GraphBuilder& gb, const std::vector<qsim::Snapshot>& batch,
                   const TrainConfig& cfg, const std::vector<std::vector<double>>& eps) {
    Tape& t = gb.t;
    const auto& c = gb.cfg();
    const auto B = static_cast<std::int64_t>(batch.size());
    const double invB = 1.0 / static_cast<double>(B);

    Id xenc = t.leaf(gb.encoder_input(batch), false);
    auto [mu, logvar] = gb.encoder_graph(xenc);
    Tensor eps_t = Tensor::zeros({B, c.latent_dim});
    for (std::int64_t b = 0; b < B; ++b) {
        if (eps[static_cast<std::size_t>(b)].size() != static_cast<std::size_t>(c.latent_dim))
            throw ShapeError("loss: eps dimension mismatch");
        for (int j = 0; j < c.latent_dim; ++j)
            eps_t.data[static_cast<std::size_t>(b * c.latent_dim + j)] =
                eps[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
    }
    Id sd = exp_(t, scale(t, logvar, 0.5));
    Id z = add(t, mu, mul(t, sd, t.leaf(eps_t, false)));

    const Tensor x_seq = gb.seq_values(batch);
    auto out = gb.decoder_graph(x_seq, z);

    // categorical reconstruction via one-hot mask on the gathered positions
    const auto& pred = gb.m.predicted_entries();
    Id recon;
    if (c.kind == data::Kind::FkmHybrid) {
        std::vector<std::int64_t> f_pos, d_pos;
        for (int i = 0; i < c.n_sites; ++i) {
            f_pos.push_back(2 * i);
            d_pos.push_back(2 * i + 1);
        }
        Id f_logp = gather_axis(t, out.cat_logp, 1, f_pos);
        Tensor onehot = Tensor::zeros({B, c.n_sites, 2});
        Tensor d_target = Tensor::zeros({B, c.n_sites});
        for (std::int64_t b = 0; b < B; ++b)
            for (int i = 0; i < c.n_sites; ++i) {
                const double f = batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(2 * i)];
                onehot.data[static_cast<std::size_t>((b * c.n_sites + i) * 2 +
                                                     static_cast<int>(f))] = 1.0;
                d_target.data[static_cast<std::size_t>(b * c.n_sites + i)] =
                    batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(2 * i + 1)];
            }
        Id f_loss = scale(t, neg(t, sum_all(t, mul(t, t.leaf(onehot, false), f_logp))), invB);
        Id g_mu = gather_axis(t, out.gauss_mu, 1, d_pos);
        Id g_ls = gather_axis(t, out.gauss_log_sigma, 1, d_pos);
        Id diff = sub(t, t.leaf(d_target, false), g_mu);
        Id quad = mul(t, square(t, diff), exp_(t, scale(t, g_ls, -2.0)));
        Id log_term = cfg.standard_gaussian_nll ? scale(t, g_ls, 2.0) : g_ls;
        Id gsum = add(t, add_const(t, log_term, kLog2Pi), quad);
        Id d_loss = scale(t, sum_all(t, gsum), 0.5 * invB);
        recon = add(t, scale(t, f_loss, cfg.alpha), scale(t, d_loss, 1.0 - cfg.alpha));
    } else {
        // gather predicted sequence positions (identity for made decoder output)
        Id logp = out.cat_logp;
        if (c.kind == data::Kind::Shadows) {
            std::vector<std::int64_t> pos;
            for (int i = 0; i < c.n_sites; ++i) pos.push_back(2 * i + 1);
            logp = gather_axis(t, logp, 1, pos);
        }
        const auto P = static_cast<std::int64_t>(pred.size());
        Tensor onehot = Tensor::zeros({B, P, 2});
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t k = 0; k < P; ++k) {
                const auto v = static_cast<int>(
                    batch[static_cast<std::size_t>(b)][static_cast<std::size_t>(
                        pred[static_cast<std::size_t>(k)])]);
                onehot.data[static_cast<std::size_t>((b * P + k) * 2 + v)] = 1.0;
            }
        recon = scale(t, neg(t, sum_all(t, mul(t, t.leaf(onehot, false), logp))), invB);
    }

    Id kl_el = sub(t, add_const(t, add(t, square(t, mu), exp_(t, logvar)), -1.0), logvar);
    Id kl = scale(t, sum_all(t, kl_el), 0.5 * invB);
    Id total = add(t, recon, scale(t, kl, cfg.beta));
    return {total, recon, kl};
}

}  // namespace

LossParts loss_components(const VaeModel& model, const std::vector<qsim::Snapshot>& batch,
                          const TrainConfig& cfg, const std::vector<std::vector<double>>& eps) {
    Tape tape;
    GraphBuilder gb(model, tape, false);
    auto ids = build_loss(gb, batch, cfg, eps);
    return {tape.val(ids.total).item(), tape.val(ids.recon).item(), tape.val(ids.kl).item()};
}

std::vector<Tensor> loss_gradients(const VaeModel& model, const std::vector<qsim::Snapshot>& batch,
                                   const TrainConfig& cfg,
                                   const std::vector<std::vector<double>>& eps, LossParts* parts) {
    Tape tape;
    GraphBuilder gb(model, tape, true);
    auto ids = build_loss(gb, batch, cfg, eps);
    tape.backward(ids.total);
    if (parts)
        *parts = {tape.val(ids.total).item(), tape.val(ids.recon).item(), tape.val(ids.kl).item()};
    std::vector<Tensor> grads;
    grads.reserve(model.params().count());
    for (std::size_t i = 0; i < model.params().count(); ++i)
        grads.push_back(tape.grad(gb.bd.ids[i]));
    return grads;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

std::pair<VaeModel, TrainingTrace> train(const data::Dataset& dataset,
                                         const ArchitectureConfig& arch, const TrainConfig& cfg) {
    VaeModel model(arch, cfg.seed);
    TrainingTrace trace;

    std::vector<const qsim::Snapshot*> pool;
    for (const auto& point : dataset.records)
        for (const auto& snap : point) pool.push_back(&snap);
    if (pool.empty()) throw DataError("train: dataset has no snapshots");

    optim::AdaBelief opt({cfg.learning_rate, 0.9, 0.999, 1e-16});
    const int Z = arch.latent_dim;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng::Engine shuffle_eng(rng::derive(cfg.seed, 0x5151 + static_cast<std::uint64_t>(epoch)));
        rng::Engine noise_eng(rng::derive(cfg.seed, 0xe9e9 + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> idx(pool.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<std::size_t>(shuffle_eng.below(i))]);

        double sum_total = 0, sum_recon = 0, sum_kl = 0;
        std::size_t seen = 0;

        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<qsim::Snapshot> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(*pool[idx[i]]);
            std::vector<std::vector<double>> eps(batch.size(), std::vector<double>(static_cast<std::size_t>(Z)));
            for (auto& row : eps)
                for (auto& e : row) e = noise_eng.normal();

            Tape tape;
            GraphBuilder gb(model, tape, true);
            auto ids = build_loss(gb, batch, cfg, eps);
            const double total = tape.val(ids.total).item();
            if (!std::isfinite(total))
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
            tape.backward(ids.total);
            opt.step(model.params(), gb.bd, tape);

            const auto B = static_cast<double>(batch.size());
            sum_total += total * B;
            sum_recon += tape.val(ids.recon).item() * B;
            sum_kl += tape.val(ids.kl).item() * B;
            seen += batch.size();
        }
        trace.total_loss.push_back(sum_total / static_cast<double>(seen));
        trace.recon_loss.push_back(sum_recon / static_cast<double>(seen));
        trace.kl_loss.push_back(sum_kl / static_cast<double>(seen));

        // per-neuron variance statistics over the whole dataset at epoch end
        std::vector<double> mean_lv(static_cast<std::size_t>(Z), 0.0);
        std::vector<double> mean_v(static_cast<std::size_t>(Z), 0.0);
        std::vector<qsim::Snapshot> all;
        all.reserve(pool.size());
        for (const auto* s : pool) all.push_back(*s);
        const auto stats = model.encode(all);
        for (const auto& st : stats)
            for (int j = 0; j < Z; ++j) {
                mean_lv[static_cast<std::size_t>(j)] += st.log_var[static_cast<std::size_t>(j)];
                mean_v[static_cast<std::size_t>(j)] += std::exp(st.log_var[static_cast<std::size_t>(j)]);
            }
        for (int j = 0; j < Z; ++j) {
            mean_lv[static_cast<std::size_t>(j)] /= static_cast<double>(stats.size());
            mean_v[static_cast<std::size_t>(j)] /= static_cast<double>(stats.size());
        }
        trace.mean_log_var.push_back(std::move(mean_lv));
        trace.mean_var.push_back(std::move(mean_v));
    }
    return {std::move(model), std::move(trace)};
}

std::vector<int> active_neurons(const std::vector<double>& mean_var, double threshold) {
    std::vector<int> out;
    for (std::size_t j = 0; j < mean_var.size(); ++j)
        if (mean_var[j] < threshold) out.push_back(static_cast<int>(j));
    return out;
}

std::vector<int> active_neurons(const TrainingTrace& trace, double threshold) {
    if (trace.mean_var.empty()) throw ConfigError("active_neurons: empty training trace");
    return active_neurons(trace.mean_var.back(), threshold);
}

LatentMap latent_map(const VaeModel& model, const data::Dataset& dataset) {
    LatentMap map;
    map.rows = dataset.grid.rows();
    map.cols = dataset.grid.cols();
    map.latent_dim = model.config().latent_dim;
    const int Z = map.latent_dim;
    map.mean_mu.resize(dataset.records.size(), std::vector<double>(static_cast<std::size_t>(Z), 0.0));
    map.mean_abs_mu.resize(dataset.records.size(), std::vector<double>(static_cast<std::size_t>(Z), 0.0));
    map.mean_var.resize(dataset.records.size(), std::vector<double>(static_cast<std::size_t>(Z), 0.0));
    for (std::size_t p = 0; p < dataset.records.size(); ++p) {
        const auto stats = model.encode(dataset.records[p]);
        for (const auto& st : stats)
            for (int j = 0; j < Z; ++j) {
                map.mean_mu[p][static_cast<std::size_t>(j)] += st.mu[static_cast<std::size_t>(j)];
                map.mean_abs_mu[p][static_cast<std::size_t>(j)] +=
                    std::abs(st.mu[static_cast<std::size_t>(j)]);
                map.mean_var[p][static_cast<std::size_t>(j)] +=
                    std::exp(st.log_var[static_cast<std::size_t>(j)]);
            }
        for (int j = 0; j < Z; ++j) {
            const auto M = static_cast<double>(stats.size());
            map.mean_mu[p][static_cast<std::size_t>(j)] /= M;
            map.mean_abs_mu[p][static_cast<std::size_t>(j)] /= M;
            map.mean_var[p][static_cast<std::size_t>(j)] /= M;
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void VaeModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write("QDVAE", 5);
    out.put(static_cast<char>(1));  // format version
    const std::string cfg_json = cfg_.to_json();
    write_u32(out, static_cast<std::uint32_t>(cfg_json.size()));
    out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    for (std::size_t i = 0; i < params_.count(); ++i) {
        const auto& name = params_.name(i);
        const auto& tv = params_.tensor(i);
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tv.shape.size()));
        for (auto d : tv.shape) write_u64(out, static_cast<std::uint64_t>(d));
        static_assert(sizeof(double) == 8);
        for (double v : tv.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            write_u64(out, bits);
        }
    }
}

VaeModel VaeModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, "QDVAE", 5) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const int version = in.get();
    if (version != 1) throw DataError("checkpoint: unsupported format version");
    const std::uint32_t cfg_len = read_u32(in);
    std::string cfg_json(cfg_len, '\0');
    in.read(cfg_json.data(), cfg_len);
    VaeModel model(ArchitectureConfig::from_json(cfg_json), 0);
    for (std::size_t i = 0; i < model.params_.count(); ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = read_u32(in);
        ad::Shape shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r)
            shape[r] = static_cast<std::int64_t>(read_u64(in));
        if (!in) throw DataError("checkpoint: truncated at parameter " + name);
        auto& tv = model.params_.get(name);
        if (tv.shape != shape) throw DataError("checkpoint: shape mismatch for " + name);
        for (auto& v : tv.data) {
            const std::uint64_t bits = read_u64(in);
            std::memcpy(&v, &bits, 8);
        }
        if (!in) throw DataError("checkpoint: truncated inside parameter " + name);
    }
    return model;
}

}  // namespace qdisc::vae
