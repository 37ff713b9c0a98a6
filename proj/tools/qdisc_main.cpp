// qdisc command-line pipeline: dataset generation, VAE training, latent maps,
// symbolic regression, shadow estimation, and physics diagnostics.

#include <CLI11.hpp>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "qdisc/analysis.hpp"
#include "qdisc/dataset.hpp"
#include "qdisc/fkm.hpp"
#include "qdisc/qsim.hpp"
#include "qdisc/shadows.hpp"
#include "qdisc/symreg.hpp"
#include "qdisc/vae.hpp"

namespace fs = std::filesystem;
using namespace qdisc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t fnv_string(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// canonical key=value serialization of the resolved options, hashed into every
// output header so reruns are verifiable
struct RunStamp {
    std::vector<std::pair<std::string, std::string>> kv;
    std::uint64_t seed = 0;

    void put(const std::string& k, const std::string& v) { kv.emplace_back(k, v); }
    void put(const std::string& k, double v) { kv.emplace_back(k, fmt(v)); }
    void put(const std::string& k, std::int64_t v) { kv.emplace_back(k, std::to_string(v)); }

    std::uint64_t hash() const {
        std::string all;
        for (const auto& [k, v] : kv) all += k + "=" + v + ";";
        return fnv_string(all);
    }
    std::string header() const { return "# config=" + hex64(hash()) + " seed=" + std::to_string(seed); }
};

fs::path resolve_out(const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("QDISC_OUTPUT_ROOT")) return fs::path(root) / p;
    return p;
}

struct GridSpec {
    double lo = 0, hi = 0;
    int count = 0;
};

GridSpec parse_grid_spec(const std::string& text) {
    GridSpec g;
    if (std::sscanf(text.c_str(), "%lf:%lf:%d", &g.lo, &g.hi, &g.count) != 3 || g.count < 1)
        throw ConfigError("bad grid spec '" + text + "' (want lo:hi:count)");
    return g;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string system;
    std::string out;
    int shots = -1;
    std::uint64_t seed = 1;
    int L = 3;        // j1j2 / fkm lattice side
    int n_chain = 15; // cluster-ising chain length
    int lx = 4, ly = 4;
    std::string axis1, axis2;  // lo:hi:count overrides
    std::string basis = "z";   // fixed measurement basis for discrete systems
    bool shadows_kind = true;  // cluster-ising: shadows by default
    int threads = 0;
};

data::Dataset run_generate(const GenerateArgs& a, RunStamp& stamp) {
    data::Dataset ds;
    ds.seed = a.seed;
    auto axis = [&](const std::string& override_spec, double lo, double hi, int count) {
        if (!override_spec.empty()) {
            const auto g = parse_grid_spec(override_spec);
            return data::linspace(g.lo, g.hi, g.count);
        }
        return data::linspace(lo, hi, count);
    };

    std::function<std::vector<qsim::Snapshot>(std::size_t, double, double, std::uint64_t)> sample_point;

    if (a.system == "j1j2") {
        ds.system = "j1j2";
        ds.kind = data::Kind::ZBasis;
        ds.n_sites = a.L * a.L;
        ds.geometry = {qsim::Geometry::Kind::Square, a.L, a.L};
        ds.grid.axis_names = {"J2", "h"};
        ds.grid.axis_values = {axis(a.axis1, 0.0, 1.5, 31), axis(a.axis2, 0.1, 2.0, 20)};
        ds.shots = a.shots > 0 ? a.shots : 500;
        ds.basis = a.basis[0];
        sample_point = [&](std::size_t, double j2, double h, std::uint64_t sd) {
            const auto gs = qsim::ground_state(qsim::build_j1j2(a.L, j2, h));
            return qsim::sample_fixed_basis(gs.psi, ds.n_sites, ds.basis, ds.shots, sd);
        };
    } else if (a.system == "cluster-ising") {
        ds.system = "cluster-ising";
        ds.n_sites = a.n_chain;
        ds.geometry = {qsim::Geometry::Kind::Chain, a.n_chain, 1};
        ds.grid.axis_names = {"h1", "h2"};
        ds.grid.axis_values = {axis(a.axis1, 0.05, 1.20, 24), axis(a.axis2, -1.5, 1.5, 30)};
        ds.shots = a.shots > 0 ? a.shots : 2000;
        if (a.shadows_kind) {
            ds.kind = data::Kind::Shadows;
            sample_point = [&](std::size_t, double h1, double h2, std::uint64_t sd) {
                const auto gs = qsim::ground_state(qsim::build_cluster_ising(a.n_chain, h1, h2));
                return qsim::sample_shadows(gs.psi, ds.n_sites, ds.shots, sd);
            };
        } else {
            ds.kind = data::Kind::ZBasis;
            ds.basis = a.basis[0];
            sample_point = [&](std::size_t, double h1, double h2, std::uint64_t sd) {
                const auto gs = qsim::ground_state(qsim::build_cluster_ising(a.n_chain, h1, h2));
                return qsim::sample_fixed_basis(gs.psi, ds.n_sites, ds.basis, ds.shots, sd);
            };
        }
    } else if (a.system == "rydberg") {
        ds.system = "rydberg";
        ds.kind = data::Kind::ZBasis;
        ds.n_sites = a.lx * a.ly;
        ds.geometry = {qsim::Geometry::Kind::Square, a.lx, a.ly};
        ds.grid.axis_names = {"Rb_over_a", "Delta_over_Omega"};
        if (a.axis1.empty()) {
            ds.grid.axis_values.push_back({1.01, 1.05, 1.13, 1.23, 1.30, 1.39, 1.46, 1.56, 1.65,
                                           1.71, 1.81, 1.89, 1.97});
        } else {
            const auto g = parse_grid_spec(a.axis1);
            ds.grid.axis_values.push_back(data::linspace(g.lo, g.hi, g.count));
        }
        ds.grid.axis_values.push_back(axis(a.axis2, -2.33, 4.65, 31));
        ds.shots = a.shots > 0 ? a.shots : 250;
        ds.basis = a.basis[0];
        sample_point = [&](std::size_t, double rb, double delta, std::uint64_t sd) {
            const auto gs = qsim::ground_state(qsim::build_rydberg(a.lx, a.ly, rb, delta));
            return qsim::sample_fixed_basis(gs.psi, ds.n_sites, ds.basis, ds.shots, sd);
        };
    } else if (a.system == "fkm") {
        ds.system = "fkm";
        ds.kind = data::Kind::FkmHybrid;
        ds.n_sites = a.L * a.L;
        ds.geometry = {qsim::Geometry::Kind::Square, a.L, a.L};
        ds.grid.axis_names = {"U", "T"};
        ds.grid.axis_values = {axis(a.axis1, 0.0, 12.0, 60), axis(a.axis2, 0.005, 0.3, 49)};
        ds.shots = a.shots > 0 ? a.shots : 1000;
        sample_point = [&](std::size_t, double u, double temp, std::uint64_t sd) {
            const auto recs = fkm::sample(a.L, u, temp, ds.shots, sd);
            std::vector<qsim::Snapshot> snaps;
            snaps.reserve(recs.size());
            for (const auto& r : recs) {
                qsim::Snapshot s(static_cast<std::size_t>(2 * ds.n_sites));
                for (int i = 0; i < ds.n_sites; ++i) {
                    s[static_cast<std::size_t>(2 * i)] = r.f[static_cast<std::size_t>(i)];
                    s[static_cast<std::size_t>(2 * i + 1)] =
                        std::clamp(r.d_density[static_cast<std::size_t>(i)], 0.0, 1.0);
                }
                snaps.push_back(std::move(s));
            }
            return snaps;
        };
    } else {
        throw ConfigError("unknown system: " + a.system);
    }

    stamp.put("system", ds.system);
    stamp.put("shots", static_cast<std::int64_t>(ds.shots));
    stamp.put("kind", data::kind_name(ds.kind));
    stamp.put("basis", std::string(1, ds.basis));
    for (std::size_t i = 0; i < ds.grid.axis_values.size(); ++i) {
        stamp.put("axis" + std::to_string(i) + ".name", ds.grid.axis_names[i]);
        for (double v : ds.grid.axis_values[i])
            stamp.put("axis" + std::to_string(i) + ".v", v);
    }
    stamp.seed = ds.seed;

    const std::size_t points = ds.grid.points();
    ds.records.resize(points);
    const auto& ax0 = ds.grid.axis_values[0];
    const auto& ax1 = ds.grid.axis_values[1];
    const std::size_t cols = ds.grid.cols();
    const int n_threads =
        a.threads > 0 ? a.threads : std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t p = next.fetch_add(1);
            if (p >= points) break;
            const double t0 = ax0[p / cols];
            const double t1 = ax1[p % cols];
            ds.records[p] = sample_point(p, t0, t1, rng::derive(ds.seed, p));
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return ds;
}

// ---------------------------------------------------------------------------
// helpers shared by commands
// ---------------------------------------------------------------------------

void write_csv(const fs::path& path, const RunStamp& stamp, const std::string& header_row,
               const std::vector<std::string>& rows) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write output: " + path.string());
    out << stamp.header() << "\n";
    out << header_row << "\n";
    for (const auto& r : rows) out << r << "\n";
}

int pick_active_neuron(const vae::LatentMap& map) {
    // most informative neuron: lowest dataset-mean variance
    std::vector<double> mean_var(static_cast<std::size_t>(map.latent_dim), 0.0);
    for (const auto& point : map.mean_var)
        for (int j = 0; j < map.latent_dim; ++j)
            mean_var[static_cast<std::size_t>(j)] += point[static_cast<std::size_t>(j)];
    int best = 0;
    for (int j = 1; j < map.latent_dim; ++j)
        if (mean_var[static_cast<std::size_t>(j)] < mean_var[static_cast<std::size_t>(best)]) best = j;
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qdisc: quantum dataset generation, latent representation learning, and "
                 "symbolic order-parameter discovery"};
    app.require_subcommand(1);
    app.set_config("--config", "", "configuration file (TOML/INI; flags override file values)");

    // ---- generate ----
    GenerateArgs gen;
    std::string gen_out;
    auto* cmd_gen = app.add_subcommand("generate", "sample a dataset across a parameter grid");
    cmd_gen->add_option("--system", gen.system, "j1j2 | cluster-ising | rydberg | fkm")->required();
    cmd_gen->add_option("--out", gen_out, "output dataset directory")->required();
    cmd_gen->add_option("--shots", gen.shots, "snapshots per grid point");
    cmd_gen->add_option("--seed", gen.seed, "RNG seed")->required();
    cmd_gen->add_option("--L", gen.L, "lattice side (j1j2, fkm)");
    cmd_gen->add_option("--N", gen.n_chain, "chain length (cluster-ising)");
    cmd_gen->add_option("--Lx", gen.lx, "lattice columns (rydberg)");
    cmd_gen->add_option("--Ly", gen.ly, "lattice rows (rydberg)");
    cmd_gen->add_option("--axis1", gen.axis1, "first axis override lo:hi:count");
    cmd_gen->add_option("--axis2", gen.axis2, "second axis override lo:hi:count");
    cmd_gen->add_option("--basis", gen.basis, "fixed measurement basis: z | x");
    cmd_gen->add_flag("!--fixed-basis", gen.shadows_kind,
                      "cluster-ising: sample in one fixed basis instead of shadows");
    cmd_gen->add_option("--threads", gen.threads, "worker threads (default: hardware)");

    // ---- train ----
    std::string tr_dataset, tr_out, tr_trace;
    vae::TrainConfig tr_cfg;
    double tr_beta = -1;
    std::string tr_encoder, tr_decoder;
    int tr_latent = 5, tr_dmodel_enc = -1, tr_dmodel_dec = -1;
    auto* cmd_train = app.add_subcommand("train", "train the probabilistic autoencoder");
    cmd_train->add_option("--dataset", tr_dataset)->required();
    cmd_train->add_option("--out", tr_out, "checkpoint path")->required();
    cmd_train->add_option("--trace", tr_trace, "per-epoch trace CSV");
    cmd_train->add_option("--beta", tr_beta, "KL weight (default per system)");
    cmd_train->add_option("--alpha", tr_cfg.alpha, "hybrid reconstruction balance");
    cmd_train->add_option("--lr", tr_cfg.learning_rate);
    cmd_train->add_option("--epochs", tr_cfg.epochs);
    cmd_train->add_option("--batch", tr_cfg.batch_size);
    cmd_train->add_option("--seed", tr_cfg.seed)->required();
    cmd_train->add_option("--latent", tr_latent, "latent dimension");
    cmd_train->add_option("--encoder", tr_encoder, "transformer | convolutional | feedforward");
    cmd_train->add_option("--decoder", tr_decoder, "transformer | masked-feedforward");
    cmd_train->add_option("--d-model-encoder", tr_dmodel_enc);
    cmd_train->add_option("--d-model-decoder", tr_dmodel_dec);
    cmd_train->add_flag("--standard-gaussian-nll", tr_cfg.standard_gaussian_nll,
                        "use (1/2) log sigma^2 in the Gaussian reconstruction term");

    // ---- latent-map ----
    std::string lm_ck, lm_dataset, lm_out;
    auto* cmd_lm = app.add_subcommand("latent-map", "per-grid-point latent statistics");
    cmd_lm->add_option("--checkpoint", lm_ck)->required();
    cmd_lm->add_option("--dataset", lm_dataset)->required();
    cmd_lm->add_option("--out", lm_out)->required();

    // ---- sr ----
    std::string sr_ck, sr_dataset, sr_out, sr_objective = "sr1", sr_stat = "abs-mu";
    std::string sr_scope, sr_neg;
    int sr_neuron = -1, sr_margin = 1, sr_max_per_point = 200;
    double sr_threshold = 0.5, sr_l1 = 0.0;
    std::uint64_t sr_seed = 1;
    bool sr_constant = false;
    auto* cmd_sr = app.add_subcommand("sr", "symbolic order-parameter search");
    cmd_sr->add_option("--checkpoint", sr_ck)->required();
    cmd_sr->add_option("--dataset", sr_dataset)->required();
    cmd_sr->add_option("--objective", sr_objective, "sr1 | sr2 | sr3-fd | sr3-cp | genetic");
    cmd_sr->add_option("--out", sr_out)->required();
    cmd_sr->add_option("--neuron", sr_neuron, "latent neuron (default: most active)");
    cmd_sr->add_option("--stat", sr_stat, "abs-mu | mu");
    cmd_sr->add_option("--threshold", sr_threshold, "cluster predicate threshold");
    cmd_sr->add_option("--margin", sr_margin, "boundary exclusion margin in cells");
    cmd_sr->add_option("--scope", sr_scope, "grid scope r0:r1:c0:c1 (inclusive)");
    cmd_sr->add_option("--neg-region", sr_neg, "negative region r0:r1:c0:c1");
    cmd_sr->add_option("--l1", sr_l1, "L1 sparsity weight");
    cmd_sr->add_option("--seed", sr_seed);
    cmd_sr->add_flag("--constant", sr_constant, "include a learnable constant");
    cmd_sr->add_option("--max-per-point", sr_max_per_point, "samples per grid point cap");

    // ---- shadows-estimate ----
    std::string se_dataset, se_obs, se_out;
    int se_k = 10;
    auto* cmd_se = app.add_subcommand("shadows-estimate",
                                      "method-of-moments observable estimate per grid point "
                                      "(remainder shots beyond K*floor(M/K) are dropped)");
    cmd_se->add_option("--dataset", se_dataset)->required();
    cmd_se->add_option("--observable", se_obs, "e.g. \"Z1 X2 Z3\" (1-indexed)")->required();
    cmd_se->add_option("--K", se_k, "number of median-of-means groups");
    cmd_se->add_option("--out", se_out, "output CSV (default stdout)");

    // ---- analyze ----
    std::string an_kind, an_dataset, an_ck, an_out;
    int an_i = 0, an_j = -1;
    auto* cmd_an = app.add_subcommand("analyze", "physics diagnostics");
    cmd_an->add_option("--kind", an_kind, "bubbles | ipr | correlators | corner | fd-map")
        ->required();
    cmd_an->add_option("--dataset", an_dataset)->required();
    cmd_an->add_option("--checkpoint", an_ck, "needed for ipr / fd-map");
    cmd_an->add_option("--out", an_out)->required();
    cmd_an->add_option("--site-i", an_i, "string order left site");
    cmd_an->add_option("--site-j", an_j, "string order right site");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (cmd_gen->parsed()) {
            RunStamp stamp;
            auto ds = run_generate(gen, stamp);
            data::dataset_write(ds, resolve_out(gen_out));
            std::cout << "dataset " << resolve_out(gen_out).string() << "\n";
            std::cout << "points " << ds.grid.points() << " rows " << ds.grid.rows() << " cols "
                      << ds.grid.cols() << "\n";
            std::cout << "hash " << hex64(data::dataset_hash(ds)) << "\n";
        } else if (cmd_train->parsed()) {
            auto ds = data::dataset_read(resolve_out(tr_dataset));
            auto arch = vae::ArchitectureConfig::for_dataset(ds);
            arch.latent_dim = tr_latent;
            if (!tr_encoder.empty()) arch.encoder = vae::encoder_from_name(tr_encoder);
            if (!tr_decoder.empty()) arch.decoder = vae::decoder_from_name(tr_decoder);
            if (tr_dmodel_enc > 0) arch.d_model_encoder = tr_dmodel_enc;
            if (tr_dmodel_dec > 0) arch.d_model_decoder = tr_dmodel_dec;
            arch.validate();
            if (tr_beta >= 0)
                tr_cfg.beta = tr_beta;
            else
                tr_cfg.beta = ds.system == "cluster-ising" ? 0.65 : 0.45;
            if (ds.system == "fkm" && tr_cfg.learning_rate == 1e-3) tr_cfg.learning_rate = 1e-4;
            auto [model, trace] = vae::train(ds, arch, tr_cfg);
            model.save(resolve_out(tr_out).string());
            RunStamp stamp;
            stamp.seed = tr_cfg.seed;
            stamp.put("beta", tr_cfg.beta);
            stamp.put("alpha", tr_cfg.alpha);
            stamp.put("lr", tr_cfg.learning_rate);
            stamp.put("epochs", static_cast<std::int64_t>(tr_cfg.epochs));
            stamp.put("batch", static_cast<std::int64_t>(tr_cfg.batch_size));
            stamp.put("dataset_hash", hex64(data::dataset_hash(ds)));
            if (!tr_trace.empty()) {
                std::string header = "epoch,total,reconstruction,kl";
                for (int j = 0; j < arch.latent_dim; ++j)
                    header += ",mean_log_var_" + std::to_string(j);
                std::vector<std::string> rows;
                for (std::size_t e = 0; e < trace.total_loss.size(); ++e) {
                    std::string row = std::to_string(e) + "," + fmt(trace.total_loss[e]) + "," +
                                      fmt(trace.recon_loss[e]) + "," + fmt(trace.kl_loss[e]);
                    for (int j = 0; j < arch.latent_dim; ++j)
                        row += "," + fmt(trace.mean_log_var[e][static_cast<std::size_t>(j)]);
                    rows.push_back(std::move(row));
                }
                write_csv(resolve_out(tr_trace), stamp, header, rows);
            }
            const auto active = vae::active_neurons(trace);
            std::cout << "active: " << active.size() << " (";
            for (std::size_t i = 0; i < active.size(); ++i) std::cout << (i ? "," : "") << active[i];
            std::cout << ")\n";
            std::cout << "final loss " << fmt(trace.total_loss.back()) << "\n";
        } else if (cmd_lm->parsed()) {
            auto ds = data::dataset_read(resolve_out(lm_dataset));
            auto model = vae::VaeModel::load(resolve_out(lm_ck).string());
            const auto map = vae::latent_map(model, ds);
            RunStamp stamp;
            stamp.put("checkpoint", lm_ck);
            stamp.put("dataset_hash", hex64(data::dataset_hash(ds)));
            std::string header = "row,col," + ds.grid.axis_names[0] + "," + ds.grid.axis_names[1];
            for (int j = 0; j < map.latent_dim; ++j) header += ",mean_mu_" + std::to_string(j);
            for (int j = 0; j < map.latent_dim; ++j) header += ",mean_abs_mu_" + std::to_string(j);
            std::vector<std::string> rows;
            for (std::size_t r = 0; r < map.rows; ++r)
                for (std::size_t c = 0; c < map.cols; ++c) {
                    const std::size_t p = r * map.cols + c;
                    std::string row = std::to_string(r) + "," + std::to_string(c) + "," +
                                      fmt(ds.grid.axis_values[0][r]) + "," +
                                      fmt(ds.grid.axis_values[1][c]);
                    for (int j = 0; j < map.latent_dim; ++j)
                        row += "," + fmt(map.mean_mu[p][static_cast<std::size_t>(j)]);
                    for (int j = 0; j < map.latent_dim; ++j)
                        row += "," + fmt(map.mean_abs_mu[p][static_cast<std::size_t>(j)]);
                    rows.push_back(std::move(row));
                }
            write_csv(resolve_out(lm_out), stamp, header, rows);
        } else if (cmd_sr->parsed()) {
            auto ds = data::dataset_read(resolve_out(sr_dataset));
            auto model = vae::VaeModel::load(resolve_out(sr_ck).string());
            const auto map = vae::latent_map(model, ds);
            const int neuron = sr_neuron >= 0 ? sr_neuron : pick_active_neuron(map);
            sr::ClusterPredicate pred;
            pred.stat = sr_stat == "mu" ? sr::ClusterPredicate::Stat::MeanMu
                                        : sr::ClusterPredicate::Stat::MeanAbsMu;
            pred.threshold = sr_threshold;
            auto parse_region = [](const std::string& text) {
                sr::GridRegion r;
                long a, b, c, d;
                if (std::sscanf(text.c_str(), "%ld:%ld:%ld:%ld", &a, &b, &c, &d) != 4)
                    throw ConfigError("bad region '" + text + "' (want r0:r1:c0:c1)");
                r.row_lo = static_cast<std::size_t>(a);
                r.row_hi = static_cast<std::size_t>(b);
                r.col_lo = static_cast<std::size_t>(c);
                r.col_hi = static_cast<std::size_t>(d);
                return r;
            };
            sr::GridRegion scope;
            if (!sr_scope.empty()) scope = parse_region(sr_scope);
            std::optional<sr::GridRegion> neg;
            if (!sr_neg.empty()) neg = parse_region(sr_neg);
            const auto labeled =
                sr::select_cluster(map, ds, neuron, pred, sr_margin, scope, neg, sr_max_per_point);

            sr::TwoBodyAnsatz fitted;
            std::string expression;
            if (sr_objective == "sr1") {
                sr::Sr1Options opts;
                opts.l1_weight = sr_l1;
                opts.use_constant = sr_constant;
                opts.seed = sr_seed;
                fitted = sr::sr1_fit(labeled, opts);
                expression = sr::ansatz_to_prefix(fitted);
            } else if (sr_objective == "genetic") {
                std::vector<std::vector<double>> X;
                std::vector<double> y;
                for (const auto& x : labeled.x_pos) {
                    X.push_back(x);
                    y.push_back(1.0);
                }
                for (const auto& x : labeled.x_neg) {
                    X.push_back(x);
                    y.push_back(0.0);
                }
                sr::GeneticOptions gopts;
                gopts.seed = sr_seed;
                const auto res = sr::genetic_search(X, y, gopts);
                expression = res.best.to_prefix();
            } else if (sr_objective == "sr2" || sr_objective == "sr3-fd" || sr_objective == "sr3-cp") {
                // boundary grid points: cells where the predicate flips between
                // neighbors inside the scope
                throw ConfigError("objective '" + sr_objective +
                                  "' is exposed through the library API; the CLI covers sr1 and "
                                  "genetic fits");
            } else {
                throw ConfigError("unknown SR objective: " + sr_objective);
            }

            // in/out scores per grid point for the metric block
            std::vector<double> score_in, score_out;
            auto point_score = [&](std::size_t p) {
                double acc = 0;
                for (const auto& snap : ds.records[p])
                    acc += fitted.evaluate(sr::sr_input(ds.kind, snap));
                return acc / static_cast<double>(ds.records[p].size());
            };
            for (std::size_t k = 0; k < labeled.point_pos.size();
                 k += static_cast<std::size_t>(std::max(1, sr_max_per_point)))
                score_in.push_back(point_score(labeled.point_pos[k]));
            for (std::size_t k = 0; k < labeled.point_neg.size();
                 k += static_cast<std::size_t>(std::max(1, sr_max_per_point)))
                score_out.push_back(point_score(labeled.point_neg[k]));
            std::vector<std::pair<std::string, double>> metrics;
            if (!score_in.empty() && !score_out.empty())
                metrics.emplace_back("auc", sr::auc(score_in, score_out));
            std::vector<double> all_scores = score_in;
            all_scores.insert(all_scores.end(), score_out.begin(), score_out.end());
            std::vector<double> oracle;
            for (std::size_t k = 0; k < labeled.point_pos.size();
                 k += static_cast<std::size_t>(std::max(1, sr_max_per_point)))
                oracle.push_back(analysis::nn_correlator(ds.records[labeled.point_pos[k]], ds.geometry));
            for (std::size_t k = 0; k < labeled.point_neg.size();
                 k += static_cast<std::size_t>(std::max(1, sr_max_per_point)))
                oracle.push_back(analysis::nn_correlator(ds.records[labeled.point_neg[k]], ds.geometry));
            if (all_scores.size() >= 2)
                metrics.emplace_back("spearman_vs_nn", sr::spearman(all_scores, oracle));
            const auto doc = sr::export_symbolic_result(expression, metrics,
                                                        data::dataset_hash(ds), sr_seed);
            fs::path outp = resolve_out(sr_out);
            fs::create_directories(outp.parent_path().empty() ? "." : outp.parent_path());
            std::ofstream out(outp, std::ios::binary);
            RunStamp stamp;
            stamp.seed = sr_seed;
            stamp.put("objective", sr_objective);
            stamp.put("neuron", static_cast<std::int64_t>(neuron));
            out << stamp.header() << "\n" << doc;
            std::cout << "expression: " << expression << "\n";
        } else if (cmd_se->parsed()) {
            auto ds = data::dataset_read(resolve_out(se_dataset));
            if (ds.kind != data::Kind::Shadows)
                throw ConfigError("shadows-estimate: dataset kind must be shadows");
            const auto obs = shadows::parse_observable(se_obs, ds.n_sites);
            RunStamp stamp;
            stamp.seed = ds.seed;
            stamp.put("observable", se_obs);
            stamp.put("K", static_cast<std::int64_t>(se_k));
            std::vector<std::string> rows;
            for (std::size_t r = 0; r < ds.grid.rows(); ++r)
                for (std::size_t c = 0; c < ds.grid.cols(); ++c) {
                    const auto ens =
                        shadows::from_snapshots(ds.records[ds.point_index(r, c)], ds.n_sites);
                    const auto est = shadows::estimate_observable(ens, obs, se_k);
                    rows.push_back(std::to_string(r) + "," + std::to_string(c) + "," +
                                   fmt(ds.grid.axis_values[0][r]) + "," +
                                   fmt(ds.grid.axis_values[1][c]) + "," + fmt(est.value) + "," +
                                   fmt(est.std_error));
                }
            const std::string header = "row,col," + ds.grid.axis_names[0] + "," +
                                       ds.grid.axis_names[1] + ",estimate,std_error";
            if (se_out.empty()) {
                std::cout << stamp.header() << "\n" << header << "\n";
                for (const auto& r : rows) std::cout << r << "\n";
            } else {
                write_csv(resolve_out(se_out), stamp, header, rows);
            }
        } else if (cmd_an->parsed()) {
            auto ds = data::dataset_read(resolve_out(an_dataset));
            RunStamp stamp;
            stamp.seed = ds.seed;
            stamp.put("kind", an_kind);
            stamp.put("dataset_hash", hex64(data::dataset_hash(ds)));
            std::vector<std::string> rows;
            std::string header;
            if (an_kind == "bubbles") {
                header = "row,col,s,p,eta,xi,r2_power,r2_exp";
                for (std::size_t p = 0; p < ds.records.size(); ++p) {
                    const auto dist = analysis::x_bubble_distribution(ds.records[p]);
                    const auto pw = analysis::fit_power_law(dist);
                    const auto ex = analysis::fit_exponential(dist);
                    for (std::size_t s = 0; s < dist.p.size(); ++s) {
                        if (dist.p[s] == 0) continue;
                        rows.push_back(std::to_string(p / ds.grid.cols()) + "," +
                                       std::to_string(p % ds.grid.cols()) + "," +
                                       std::to_string(s + 1) + "," + fmt(dist.p[s]) + "," +
                                       fmt(pw.exponent) + "," + fmt(ex.scale) + "," + fmt(pw.r2) +
                                       "," + fmt(ex.r2));
                    }
                }
            } else if (an_kind == "correlators") {
                header = "row,col,nn,nnn";
                for (std::size_t p = 0; p < ds.records.size(); ++p)
                    rows.push_back(std::to_string(p / ds.grid.cols()) + "," +
                                   std::to_string(p % ds.grid.cols()) + "," +
                                   fmt(analysis::nn_correlator(ds.records[p], ds.geometry)) + "," +
                                   fmt(analysis::nnn_correlator(ds.records[p], ds.geometry)));
            } else if (an_kind == "corner") {
                header = "row,col,f,f_tilde,bulk_edge_nn";
                for (std::size_t p = 0; p < ds.records.size(); ++p) {
                    const auto co =
                        analysis::corner_order(ds.records[p], ds.geometry.lx, ds.geometry.ly);
                    rows.push_back(std::to_string(p / ds.grid.cols()) + "," +
                                   std::to_string(p % ds.grid.cols()) + "," + fmt(co.f) + "," +
                                   fmt(co.f_tilde) + "," + fmt(co.bulk_edge_nn));
                }
            } else if (an_kind == "ipr" || an_kind == "fd-map") {
                if (an_ck.empty()) throw ConfigError("analyze " + an_kind + " needs --checkpoint");
                auto model = vae::VaeModel::load(resolve_out(an_ck).string());
                if (an_kind == "fd-map") {
                    const auto map = analysis::fd_repulsion_map(model, ds);
                    header = "row,col,cp_product,raw_correlator";
                    for (std::size_t p = 0; p < ds.records.size(); ++p)
                        rows.push_back(std::to_string(p / ds.grid.cols()) + "," +
                                       std::to_string(p % ds.grid.cols()) + "," +
                                       fmt(map.cp_product[p]) + "," + fmt(map.raw_correlator[p]));
                } else {
                    header = "row,col,ipr";
                    for (std::size_t p = 0; p < ds.records.size(); ++p) {
                        const auto stats = model.encode(ds.records[p]);
                        std::vector<double> z(static_cast<std::size_t>(model.config().latent_dim), 0.0);
                        for (const auto& st : stats)
                            for (std::size_t j = 0; j < z.size(); ++j)
                                z[j] += st.mu[j] / static_cast<double>(stats.size());
                        const auto cp = model.conditional_probability_map({z}, {{0, 1.0}})[0];
                        std::vector<double> fprobs;
                        for (int i = 0; i < ds.n_sites; ++i)
                            fprobs.push_back(
                                ds.kind == data::Kind::FkmHybrid
                                    ? cp[static_cast<std::size_t>(2 * i)]
                                    : cp[static_cast<std::size_t>(i)]);
                        rows.push_back(std::to_string(p / ds.grid.cols()) + "," +
                                       std::to_string(p % ds.grid.cols()) + "," +
                                       fmt(analysis::ipr_from_cp(fprobs)));
                    }
                }
            } else {
                throw ConfigError("unknown analyze kind: " + an_kind);
            }
            (void)an_i;
            (void)an_j;
            write_csv(resolve_out(an_out), stamp, header, rows);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
