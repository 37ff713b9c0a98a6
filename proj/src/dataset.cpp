#include "qdisc/dataset.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace qdisc::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::ZBasis: return "z-basis";
        case Kind::Shadows: return "shadows";
        case Kind::FkmHybrid: return "fkm-hybrid";
    }
    return "?";
}

Kind kind_from_name(const std::string& s) {
    if (s == "z-basis") return Kind::ZBasis;
    if (s == "shadows") return Kind::Shadows;
    if (s == "fkm-hybrid") return Kind::FkmHybrid;
    throw DataError("unknown dataset kind: " + s);
}

void ParameterGrid::validate() const {
    if (axis_names.empty() || axis_names.size() != axis_values.size())
        throw DataError("parameter grid: axis names/values mismatch");
    for (std::size_t a = 0; a < axis_values.size(); ++a) {
        const auto& vals = axis_values[a];
        if (vals.empty()) throw DataError("parameter grid: axis " + axis_names[a] + " is empty");
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (!std::isfinite(vals[i]))
                throw DataError("parameter grid: non-finite value on axis " + axis_names[a]);
            if (i > 0 && vals[i] <= vals[i - 1] && vals.size() > 1)
                throw DataError("parameter grid: axis " + axis_names[a] +
                                " is not strictly increasing");
        }
    }
}

int Dataset::snapshot_length() const {
    switch (kind) {
        case Kind::ZBasis: return n_sites;
        case Kind::Shadows:
        case Kind::FkmHybrid: return 2 * n_sites;
    }
    return 0;
}

void Dataset::validate() const {
    grid.validate();
    if (records.empty()) throw DataError("dataset has no records");
    if (records.size() != grid.points())
        throw DataError("dataset record count " + std::to_string(records.size()) +
                        " does not match grid size " + std::to_string(grid.points()));
    const auto len = static_cast<std::size_t>(snapshot_length());
    for (std::size_t p = 0; p < records.size(); ++p) {
        const auto point = "p" + std::to_string(p / grid.cols()) + "_" + std::to_string(p % grid.cols());
        if (records[p].size() != static_cast<std::size_t>(shots))
            throw DataError("dataset: shot count mismatch at grid point " + point);
        for (const auto& snap : records[p]) {
            if (snap.size() != len)
                throw DataError("dataset: snapshot length mismatch at grid point " + point);
            for (std::size_t i = 0; i < snap.size(); ++i) {
                const double v = snap[i];
                bool ok = true;
                switch (kind) {
                    case Kind::ZBasis: ok = v == 0.0 || v == 1.0; break;
                    case Kind::Shadows:
                        ok = (i % 2 == 0) ? (v == 0.0 || v == 1.0 || v == 2.0)
                                          : (v == 0.0 || v == 1.0);
                        break;
                    case Kind::FkmHybrid:
                        ok = (i % 2 == 0) ? (v == 0.0 || v == 1.0) : (v >= 0.0 && v <= 1.0);
                        break;
                }
                if (!ok)
                    throw DataError("dataset: value " + std::to_string(v) +
                                    " out of range at grid point " + point);
            }
        }
    }
}

namespace {

constexpr int kFormatVersion = 1;

std::string format_value(Kind kind, std::size_t col, double v) {
    const bool integral = kind == Kind::ZBasis || kind == Kind::Shadows ||
                          (kind == Kind::FkmHybrid && col % 2 == 0);
    char buf[32];
    if (integral)
        std::snprintf(buf, sizeof buf, "%d", static_cast<int>(v));
    else
        std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void dataset_write(const Dataset& d, const fs::path& dir) {
    d.validate();
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["system"] = d.system;
    manifest["kind"] = kind_name(d.kind);
    manifest["n_sites"] = d.n_sites;
    manifest["geometry"] = {
        {"kind", d.geometry.kind == qsim::Geometry::Kind::Chain ? "chain" : "square"},
        {"lx", d.geometry.lx},
        {"ly", d.geometry.ly}};
    json axes = json::array();
    for (std::size_t a = 0; a < d.grid.axis_names.size(); ++a)
        axes.push_back({{"name", d.grid.axis_names[a]}, {"values", d.grid.axis_values[a]}});
    manifest["axes"] = axes;
    manifest["shots"] = d.shots;
    manifest["seed"] = d.seed;
    manifest["basis"] = std::string(1, d.basis);
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        if (!out) throw DataError("cannot write manifest: " + (dir / "manifest.json").string());
        out << manifest.dump(2) << "\n";
    }
    const std::size_t cols = d.grid.cols();
    for (std::size_t p = 0; p < d.records.size(); ++p) {
        const auto name = "p" + std::to_string(p / cols) + "_" + std::to_string(p % cols) + ".csv";
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw DataError("cannot write record file: " + (dir / name).string());
        out << "# seed=" << d.seed << " point=" << p / cols << "," << p % cols << "\n";
        for (const auto& snap : d.records[p]) {
            std::string line;
            for (std::size_t i = 0; i < snap.size(); ++i) {
                if (i) line += ',';
                line += format_value(d.kind, i, snap[i]);
            }
            out << line << "\n";
        }
    }
}

Dataset dataset_read(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw DataError("missing manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest: " + std::string(e.what()));
    }
    Dataset d;
    try {
        if (manifest.at("format_version").get<int>() != kFormatVersion)
            throw DataError("unsupported dataset format version");
        d.system = manifest.at("system").get<std::string>();
        d.kind = kind_from_name(manifest.at("kind").get<std::string>());
        d.n_sites = manifest.at("n_sites").get<int>();
        const auto& g = manifest.at("geometry");
        d.geometry.kind = g.at("kind").get<std::string>() == "chain" ? qsim::Geometry::Kind::Chain
                                                                     : qsim::Geometry::Kind::Square;
        d.geometry.lx = g.at("lx").get<int>();
        d.geometry.ly = g.at("ly").get<int>();
        for (const auto& axis : manifest.at("axes")) {
            d.grid.axis_names.push_back(axis.at("name").get<std::string>());
            d.grid.axis_values.push_back(axis.at("values").get<std::vector<double>>());
        }
        d.shots = manifest.at("shots").get<int>();
        d.seed = manifest.at("seed").get<std::uint64_t>();
        const auto basis = manifest.at("basis").get<std::string>();
        d.basis = basis.empty() ? 'z' : basis[0];
    } catch (const json::exception& e) {
        throw DataError("malformed manifest: " + std::string(e.what()));
    }
    d.grid.validate();
    const std::size_t cols = d.grid.cols();
    d.records.resize(d.grid.points());
    const auto len = static_cast<std::size_t>(d.snapshot_length());
    for (std::size_t p = 0; p < d.records.size(); ++p) {
        const auto point = "p" + std::to_string(p / cols) + "_" + std::to_string(p % cols);
        std::ifstream rec(dir / (point + ".csv"), std::ios::binary);
        if (!rec) throw DataError("missing record file for grid point " + point);
        std::string line;
        while (std::getline(rec, line)) {
            if (line.empty() || line[0] == '#') continue;
            qsim::Snapshot snap;
            snap.reserve(len);
            std::size_t pos = 0;
            while (pos <= line.size()) {
                const std::size_t comma = line.find(',', pos);
                const std::string tok =
                    line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                try {
                    snap.push_back(std::stod(tok));
                } catch (...) {
                    throw DataError("malformed value '" + tok + "' in record file for grid point " +
                                    point);
                }
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            if (snap.size() != len)
                throw DataError("truncated record (got " + std::to_string(snap.size()) +
                                " of " + std::to_string(len) + " values) in grid point " + point);
            d.records[p].push_back(std::move(snap));
        }
        if (d.records[p].size() != static_cast<std::size_t>(d.shots))
            throw DataError("shot count mismatch in record file for grid point " + point);
    }
    d.validate();
    return d;
}

std::uint64_t dataset_hash(const Dataset& d) {
    std::uint64_t h = 1469598103934665603ULL;
    auto fnv_bytes = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    auto fnv_str = [&](const std::string& s) { fnv_bytes(s.data(), s.size()); };
    fnv_str(d.system);
    fnv_str(kind_name(d.kind));
    fnv_bytes(&d.n_sites, sizeof d.n_sites);
    fnv_bytes(&d.shots, sizeof d.shots);
    fnv_bytes(&d.seed, sizeof d.seed);
    for (const auto& ax : d.grid.axis_values)
        fnv_bytes(ax.data(), ax.size() * sizeof(double));
    for (const auto& point : d.records)
        for (const auto& snap : point) fnv_bytes(snap.data(), snap.size() * sizeof(double));
    return h;
}

}  // namespace qdisc::data
