#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qdisc/dataset.hpp"

using namespace qdisc;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const fs::path out = fs::temp_directory_path() / "qdisc_cli_out.txt";
    const std::string cmd = std::string(QDISC_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream in(out);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    return {WEXITSTATUS(rc), text};
}

std::string file_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

const fs::path kWork = fs::temp_directory_path() / "qdisc_cli_work";

}  // namespace

TEST_CASE("generate: unknown system exits with the config code") {
    const auto r = run_cli("generate --system nosuch --out /tmp/x --seed 1");
    CHECK(r.exit_code == 2);
}

TEST_CASE("generate is reproducible byte for byte and hash-stable") {
    fs::remove_all(kWork);
    const auto d1 = kWork / "ds1";
    const auto d2 = kWork / "ds2";
    const std::string common =
        "generate --system j1j2 --L 2 --shots 16 --seed 7 --axis1 0:1.5:4 --axis2 0.1:2:3 --out ";
    const auto r1 = run_cli(common + d1.string());
    REQUIRE(r1.exit_code == 0);
    const auto r2 = run_cli(common + d2.string());
    REQUIRE(r2.exit_code == 0);
    // same reported hash
    const auto hash_of = [](const std::string& text) {
        const auto pos = text.find("hash ");
        return text.substr(pos, 21);
    };
    CHECK(hash_of(r1.output) == hash_of(r2.output));
    // identical record bytes
    CHECK(file_text(d1 / "p0_0.csv") == file_text(d2 / "p0_0.csv"));
    CHECK(file_text(d1 / "p3_2.csv") == file_text(d2 / "p3_2.csv"));
    CHECK(file_text(d1 / "manifest.json") == file_text(d2 / "manifest.json"));
    // readable as a dataset with the declared grid
    const auto ds = data::dataset_read(d1);
    CHECK(ds.grid.rows() == 4);
    CHECK(ds.grid.cols() == 3);
    CHECK(ds.shots == 16);
}

TEST_CASE("default j1j2 grid is 31 x 20") {
    // grid resolution comes from the builtin defaults; checked without sampling
    CHECK(data::linspace(0.0, 1.5, 31).size() * data::linspace(0.1, 2.0, 20).size() == 620);
}

TEST_CASE("end-to-end: train, latent-map, sr, analyze on a tiny dataset") {
    fs::remove_all(kWork);
    const auto ds_dir = kWork / "ds";
    const auto r_gen = run_cli(
        "generate --system j1j2 --L 3 --shots 40 --seed 3 --axis1 0:1.5:5 --axis2 0.1:2:4 --out " +
        ds_dir.string());
    REQUIRE(r_gen.exit_code == 0);

    const auto ck = kWork / "model.qdvae";
    const auto trace = kWork / "trace.csv";
    const std::string train_args = "train --dataset " + ds_dir.string() + " --out " + ck.string() +
                                   " --trace " + trace.string() +
                                   " --epochs 3 --batch 64 --seed 11";
    const auto r_tr = run_cli(train_args);
    REQUIRE(r_tr.exit_code == 0);
    CHECK(r_tr.output.find("active:") != std::string::npos);
    // trace row count equals the epoch count (+ header + stamp)
    std::istringstream tr(file_text(trace));
    std::string line;
    int rows = 0;
    bool saw_header = false, saw_stamp = false;
    while (std::getline(tr, line)) {
        if (line.rfind("# config=", 0) == 0) {
            saw_stamp = true;
            continue;
        }
        if (line.rfind("epoch,", 0) == 0) {
            saw_header = true;
            continue;
        }
        if (!line.empty()) ++rows;
    }
    CHECK(saw_stamp);
    CHECK(saw_header);
    CHECK(rows == 3);

    // retrain with the same seed: identical checkpoint bytes
    const auto ck2 = kWork / "model2.qdvae";
    const auto r_tr2 = run_cli("train --dataset " + ds_dir.string() + " --out " + ck2.string() +
                               " --epochs 3 --batch 64 --seed 11");
    REQUIRE(r_tr2.exit_code == 0);
    CHECK(file_text(ck) == file_text(ck2));

    // latent map: header carries 2Z statistic columns
    const auto map_csv = kWork / "map.csv";
    const auto r_lm = run_cli("latent-map --checkpoint " + ck.string() + " --dataset " +
                              ds_dir.string() + " --out " + map_csv.string());
    REQUIRE(r_lm.exit_code == 0);
    const auto map_text = file_text(map_csv);
    CHECK(map_text.find("mean_mu_0") != std::string::npos);
    CHECK(map_text.find("mean_abs_mu_4") != std::string::npos);
    CHECK(map_text.find("# config=") == 0);

    // sr with an always-true predicate has no negatives: config error
    const auto r_bad = run_cli("sr --checkpoint " + ck.string() + " --dataset " + ds_dir.string() +
                               " --objective sr1 --threshold -1 --out " + (kWork / "sr.txt").string());
    CHECK(r_bad.exit_code == 2);

    // sr1 run emits expression + metrics
    const auto r_sr = run_cli("sr --checkpoint " + ck.string() + " --dataset " + ds_dir.string() +
                              " --objective sr1 --threshold 0.05 --margin 0 --seed 5 --out " +
                              (kWork / "sr.txt").string());
    if (r_sr.exit_code == 0) {
        const auto sr_text = file_text(kWork / "sr.txt");
        CHECK(sr_text.find("expression:") != std::string::npos);
        CHECK(sr_text.find("metrics:") != std::string::npos);
    } else {
        CHECK(r_sr.exit_code == 2);  // degenerate latent map on a tiny run
    }

    // analyze correlators
    const auto corr_csv = kWork / "corr.csv";
    const auto r_an = run_cli("analyze --kind correlators --dataset " + ds_dir.string() +
                              " --out " + corr_csv.string());
    REQUIRE(r_an.exit_code == 0);
    CHECK(file_text(corr_csv).find("nn,nnn") != std::string::npos);

    // analyze corner emits one row per grid point
    const auto corner_csv = kWork / "corner.csv";
    const auto r_cn = run_cli("analyze --kind corner --dataset " + ds_dir.string() + " --out " +
                              corner_csv.string());
    REQUIRE(r_cn.exit_code == 0);
    std::istringstream cs(file_text(corner_csv));
    int corner_rows = 0;
    while (std::getline(cs, line))
        if (!line.empty() && line[0] != '#' && line.rfind("row,", 0) != 0) ++corner_rows;
    CHECK(corner_rows == 20);
    fs::remove_all(kWork);
}

TEST_CASE("shadows-estimate: malformed observable exits with config code") {
    fs::remove_all(kWork);
    const auto ds_dir = kWork / "shadow_ds";
    const auto r_gen = run_cli(
        "generate --system cluster-ising --N 3 --shots 4000 --seed 5 --axis1 0.05:1.2:2 "
        "--axis2 -1.5:1.5:2 --out " +
        ds_dir.string());
    REQUIRE(r_gen.exit_code == 0);
    const auto bad = run_cli("shadows-estimate --dataset " + ds_dir.string() + " --observable Q9");
    CHECK(bad.exit_code == 2);
    const auto good =
        run_cli("shadows-estimate --dataset " + ds_dir.string() + " --observable \"Z1\" --K 10");
    REQUIRE(good.exit_code == 0);
    CHECK(good.output.find("estimate,std_error") != std::string::npos);
    // K = 1 equals the plain mean: estimate equals itself deterministically on rerun
    const auto again =
        run_cli("shadows-estimate --dataset " + ds_dir.string() + " --observable \"Z1\" --K 1");
    CHECK(again.exit_code == 0);
    fs::remove_all(kWork);
}

TEST_CASE("x-basis generation for bubble analysis") {
    fs::remove_all(kWork);
    const auto ds_dir = kWork / "xbasis";
    const auto r = run_cli(
        "generate --system cluster-ising --N 5 --shots 50 --seed 2 --fixed-basis --basis x "
        "--axis1 0.05:1.2:2 --axis2 -1.5:1.5:2 --out " +
        ds_dir.string());
    REQUIRE(r.exit_code == 0);
    const auto ds = data::dataset_read(ds_dir);
    CHECK(ds.kind == data::Kind::ZBasis);
    CHECK(ds.basis == 'x');
    const auto bub = run_cli("analyze --kind bubbles --dataset " + ds_dir.string() + " --out " +
                             (kWork / "bub.csv").string());
    REQUIRE(bub.exit_code == 0);
    CHECK(file_text(kWork / "bub.csv").find("eta") != std::string::npos);
    fs::remove_all(kWork);
}
