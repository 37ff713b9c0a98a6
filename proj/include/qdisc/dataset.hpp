#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qdisc/qsim.hpp"

namespace qdisc::data {

enum class Kind { ZBasis, Shadows, FkmHybrid };

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& s);

struct ParameterGrid {
    std::vector<std::string> axis_names;
    std::vector<std::vector<double>> axis_values;

    std::size_t rows() const { return axis_values.at(0).size(); }
    std::size_t cols() const { return axis_values.size() > 1 ? axis_values.at(1).size() : 1; }
    std::size_t points() const { return rows() * cols(); }
    void validate() const;
};

inline std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        v[static_cast<std::size_t>(i)] =
            n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

struct Dataset {
    Kind kind = Kind::ZBasis;
    std::string system;
    int n_sites = 0;
    qsim::Geometry geometry;
    ParameterGrid grid;
    int shots = 0;
    std::uint64_t seed = 0;
    char basis = 'z';  // measurement basis for Z-basis datasets ('z' or 'x')
    // records[row * cols + col][shot][entry]
    std::vector<std::vector<qsim::Snapshot>> records;

    std::size_t point_index(std::size_t row, std::size_t col) const { return row * grid.cols() + col; }
    int snapshot_length() const;
    void validate() const;
};

void dataset_write(const Dataset& d, const std::filesystem::path& dir);
Dataset dataset_read(const std::filesystem::path& dir);

// FNV-1a over the manifest fields and every record value; stable across runs
std::uint64_t dataset_hash(const Dataset& d);

}  // namespace qdisc::data
