#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qdisc/dataset.hpp"
#include "qdisc/nn.hpp"
#include "qdisc/optim.hpp"

namespace qdisc::vae {

enum class EncoderKind { Transformer, Convolutional, Feedforward };
enum class DecoderKind { Transformer, MaskedFeedforward };

std::string encoder_name(EncoderKind k);
std::string decoder_name(DecoderKind k);
EncoderKind encoder_from_name(const std::string& s);
DecoderKind decoder_from_name(const std::string& s);

struct ArchitectureConfig {
    EncoderKind encoder = EncoderKind::Transformer;
    DecoderKind decoder = DecoderKind::Transformer;
    data::Kind kind = data::Kind::ZBasis;
    int n_sites = 0;         // N
    int input_length = 0;    // I: N for z-basis, 2N for shadows and hybrid
    int latent_dim = 5;      // Z
    int d_model_encoder = 16;
    int d_model_decoder = 32;
    int heads_encoder = 2;
    int heads_decoder = 4;
    int n_layers = 3;
    int conv_channels = 32;                       // convolutional encoder
    std::vector<std::int64_t> made_hidden = {36, 36, 36};  // masked feedforward decoder
    int ff_hidden = 32;                           // feedforward encoder
    int lattice_lx = 0, lattice_ly = 0;           // square geometry (0,0 = chain)
    bool snake_ordering = false;                  // decoder ordering for 2-D lattices

    int vocab() const { return kind == data::Kind::Shadows ? 3 : 2; }
    void validate() const;
    std::string to_json() const;
    static ArchitectureConfig from_json(const std::string& text);
    // defaults matching the per-system setups
    static ArchitectureConfig for_dataset(const data::Dataset& d);
};

struct LatentStats {
    std::vector<double> mu;
    std::vector<double> log_var;
};

// Per predicted position: categorical slots carry log-probabilities over the
// classes, Gaussian slots carry (mu, log sigma) of the density distribution.
struct SitePrediction {
    bool gaussian = false;
    double log_p[3] = {0, 0, 0};  // up to vocab classes
    double mu = 0;
    double log_sigma = 0;
};

struct TrainConfig {
    double beta = 0.45;
    double alpha = 0.8;  // hybrid reconstruction balance
    double learning_rate = 1e-3;
    int epochs = 20;
    int batch_size = 256;
    std::uint64_t seed = 0;
    bool standard_gaussian_nll = false;  // use (1/2) log sigma^2 instead of (1/2) log sigma
};

struct TrainingTrace {
    std::vector<double> total_loss, recon_loss, kl_loss;   // per-epoch means
    std::vector<std::vector<double>> mean_log_var;         // [epoch][neuron]
    std::vector<std::vector<double>> mean_var;             // [epoch][neuron]
};

struct LossParts {
    double total = 0, reconstruction = 0, kl = 0;
};

class VaeModel {
public:
    VaeModel(ArchitectureConfig cfg, std::uint64_t seed);

    const ArchitectureConfig& config() const { return cfg_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    // sequence positions carrying a prediction, in autoregressive order,
    // as indices into the dataset-layout snapshot
    const std::vector<int>& predicted_entries() const { return predicted_entries_; }
    // dataset-layout entry fed at sequence position i
    const std::vector<int>& entry_order() const { return order_; }
    const std::vector<nn::MadeMasks>& masks() const;

    std::vector<LatentStats> encode(const std::vector<qsim::Snapshot>& batch) const;

    // teacher-forced conditionals; one z per snapshot (z.size() == batch size
    // or 1, in which case it is shared)
    std::vector<std::vector<SitePrediction>> decode_conditionals(
        const std::vector<std::vector<double>>& z, const std::vector<qsim::Snapshot>& batch) const;

    // ancestral sampling; clamp maps dataset-layout entry -> fixed value
    qsim::Snapshot generate(const std::vector<double>& z, const std::map<int, double>& clamp,
                            std::uint64_t seed) const;
    std::vector<qsim::Snapshot> generate_batch(const std::vector<std::vector<double>>& z,
                                               const std::vector<std::map<int, double>>& clamp,
                                               std::uint64_t seed) const;

    // decoder fed its own greedy/expected values; returns per dataset-layout
    // entry p(x=1) (categorical) or mu_d (Gaussian); optional clamped entries
    std::vector<std::vector<double>> conditional_probability_map(
        const std::vector<std::vector<double>>& z, const std::map<int, double>& clamp = {}) const;

    // gradient of one latent mean w.r.t. the encoder inputs (continuous
    // encoders only); x in dataset layout
    std::vector<double> encoder_input_gradient(const qsim::Snapshot& x, int neuron) const;

    void save(const std::string& path) const;
    static VaeModel load(const std::string& path);

private:
    friend struct GraphBuilder;
    friend LossParts loss_components(const VaeModel&, const std::vector<qsim::Snapshot>&,
                                     const TrainConfig&, const std::vector<std::vector<double>>&);
    friend std::vector<ad::Tensor> loss_gradients(const VaeModel&,
                                                  const std::vector<qsim::Snapshot>&,
                                                  const TrainConfig&,
                                                  const std::vector<std::vector<double>>&,
                                                  LossParts*);
    friend std::pair<VaeModel, TrainingTrace> train(const data::Dataset&,
                                                    const ArchitectureConfig&, const TrainConfig&);

    ArchitectureConfig cfg_;
    nn::ParamSet params_;
    std::vector<int> order_;             // sequence position -> dataset entry
    std::vector<int> predicted_entries_; // predicted dataset entries, autoregressive order
    std::vector<nn::MadeMasks> made_;    // masked decoder masks (single element when used)
};

// z_i = mu_i + exp(log_var_i / 2) * eps_i
std::vector<double> reparameterize(const LatentStats& stats, const std::vector<double>& eps);

// positive categorical reconstruction loss -sum_i log p(x_i = observed)
double loss_reconstruction_categorical(const std::vector<SitePrediction>& cp,
                                       const qsim::Snapshot& x_predicted_entries);

// per-sample Gaussian reconstruction loss, paper form by default
double loss_reconstruction_gaussian(double mu_d, double log_sigma_d, double d,
                                    bool standard_form = false);

double kl_divergence(const LatentStats& stats);

// full loss on a batch with explicit reparameterization noise (one eps row
// per sample); eval path, no gradients
LossParts loss_components(const VaeModel& model, const std::vector<qsim::Snapshot>& batch,
                          const TrainConfig& cfg, const std::vector<std::vector<double>>& eps);

// analytic gradients in ParamSet order (for gradient checks)
std::vector<ad::Tensor> loss_gradients(const VaeModel& model,
                                       const std::vector<qsim::Snapshot>& batch,
                                       const TrainConfig& cfg,
                                       const std::vector<std::vector<double>>& eps,
                                       LossParts* parts = nullptr);

std::pair<VaeModel, TrainingTrace> train(const data::Dataset& dataset,
                                         const ArchitectureConfig& arch, const TrainConfig& cfg);

std::vector<int> active_neurons(const std::vector<double>& mean_var, double threshold = 0.5);
std::vector<int> active_neurons(const TrainingTrace& trace, double threshold = 0.5);

struct LatentMap {
    std::size_t rows = 0, cols = 0;
    int latent_dim = 0;
    // [point][neuron]
    std::vector<std::vector<double>> mean_mu;
    std::vector<std::vector<double>> mean_abs_mu;
    std::vector<std::vector<double>> mean_var;
};

LatentMap latent_map(const VaeModel& model, const data::Dataset& dataset);

}  // namespace qdisc::vae
