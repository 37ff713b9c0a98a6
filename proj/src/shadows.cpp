#include "qdisc/shadows.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace qdisc::shadows {

ShadowEnsemble from_snapshots(const std::vector<qsim::Snapshot>& snaps, int n_sites) {
    ShadowEnsemble ens;
    ens.n_sites = n_sites;
    ens.records.reserve(snaps.size());
    for (const auto& s : snaps) {
        if (s.size() != static_cast<std::size_t>(2 * n_sites))
            throw DataError("shadow record length " + std::to_string(s.size()) +
                            " does not match 2N = " + std::to_string(2 * n_sites));
        ShadowRecord rec;
        rec.basis.resize(static_cast<std::size_t>(n_sites));
        rec.outcome.resize(static_cast<std::size_t>(n_sites));
        for (int i = 0; i < n_sites; ++i) {
            rec.basis[static_cast<std::size_t>(i)] =
                static_cast<qsim::Pauli>(static_cast<int>(s[static_cast<std::size_t>(2 * i)]));
            rec.outcome[static_cast<std::size_t>(i)] =
                1 - 2 * static_cast<int>(s[static_cast<std::size_t>(2 * i + 1)]);
        }
        ens.records.push_back(std::move(rec));
    }
    return ens;
}

std::array<std::complex<double>, 4> single_shot_site(qsim::Pauli basis, int outcome) {
    using C = std::complex<double>;
    const double b = static_cast<double>(outcome);
    // (1 + 3 b P)/2 row-major
    switch (basis) {
        case qsim::Pauli::X: return {C(0.5), C(1.5 * b), C(1.5 * b), C(0.5)};
        case qsim::Pauli::Y: return {C(0.5), C(0, -1.5 * b), C(0, 1.5 * b), C(0.5)};
        case qsim::Pauli::Z: return {C(0.5 + 1.5 * b), C(0), C(0), C(0.5 - 1.5 * b)};
    }
    return {};
}

double pauli_single_shot(const ShadowRecord& rec, const qsim::PauliTerm& observable) {
    double v = observable.coefficient;
    for (const auto& op : observable.ops) {
        const auto site = static_cast<std::size_t>(op.site);
        if (site >= rec.basis.size()) throw DataError("observable site outside the record");
        if (rec.basis[site] != op.p) return 0.0;
        v *= 3.0 * static_cast<double>(rec.outcome[site]);
    }
    return v;
}

double median_of_means(const std::vector<double>& values, int k_groups) {
    if (k_groups < 1) throw ConfigError("median_of_means: K must be >= 1");
    if (static_cast<std::size_t>(k_groups) > values.size())
        throw ConfigError("median_of_means: K = " + std::to_string(k_groups) +
                          " exceeds sample count " + std::to_string(values.size()));
    const std::size_t group = values.size() / static_cast<std::size_t>(k_groups);
    std::vector<double> means(static_cast<std::size_t>(k_groups), 0.0);
    for (int g = 0; g < k_groups; ++g) {
        double s = 0;
        for (std::size_t i = 0; i < group; ++i) s += values[static_cast<std::size_t>(g) * group + i];
        means[static_cast<std::size_t>(g)] = s / static_cast<double>(group);
    }
    std::sort(means.begin(), means.end());
    const std::size_t mid = means.size() / 2;
    return means.size() % 2 == 1 ? means[mid] : 0.5 * (means[mid - 1] + means[mid]);
}

Estimate estimate_observable(const ShadowEnsemble& ensemble, const qsim::PauliTerm& observable,
                             int k_groups) {
    if (ensemble.records.empty()) throw DataError("estimate_observable: empty shadow ensemble");
    std::vector<double> values;
    values.reserve(ensemble.records.size());
    for (const auto& rec : ensemble.records) values.push_back(pauli_single_shot(rec, observable));
    const int k = std::min<int>(k_groups, static_cast<int>(values.size()));
    Estimate est;
    est.value = median_of_means(values, k);
    const std::size_t group = values.size() / static_cast<std::size_t>(k);
    std::vector<double> means(static_cast<std::size_t>(k), 0.0);
    for (int g = 0; g < k; ++g) {
        double s = 0;
        for (std::size_t i = 0; i < group; ++i) s += values[static_cast<std::size_t>(g) * group + i];
        means[static_cast<std::size_t>(g)] = s / static_cast<double>(group);
    }
    double mean = 0;
    for (double m : means) mean += m;
    mean /= static_cast<double>(k);
    double var = 0;
    for (double m : means) var += (m - mean) * (m - mean);
    var = k > 1 ? var / static_cast<double>(k - 1) : 0.0;
    est.std_error = std::sqrt(var / static_cast<double>(k));
    return est;
}

Estimate estimate_observable(const ShadowEnsemble& ensemble,
                             const std::vector<qsim::PauliTerm>& observable, int k_groups) {
    Estimate total;
    double var = 0;
    for (const auto& term : observable) {
        const Estimate e = estimate_observable(ensemble, term, k_groups);
        total.value += e.value;
        var += e.std_error * e.std_error;
    }
    total.std_error = std::sqrt(var);
    return total;
}

qsim::PauliTerm parse_observable(const std::string& text, int n_sites) {
    qsim::PauliTerm term;
    term.coefficient = 1.0;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(tok[0])));
        qsim::Pauli p;
        if (c == 'X')
            p = qsim::Pauli::X;
        else if (c == 'Y')
            p = qsim::Pauli::Y;
        else if (c == 'Z')
            p = qsim::Pauli::Z;
        else
            throw ConfigError("observable: unknown Pauli '" + tok + "'");
        int site = 0;
        try {
            site = std::stoi(tok.substr(1));
        } catch (...) {
            throw ConfigError("observable: missing site index in '" + tok + "'");
        }
        if (site < 1 || site > n_sites)
            throw ConfigError("observable: site " + std::to_string(site) + " outside [1," +
                              std::to_string(n_sites) + "]");
        for (const auto& op : term.ops)
            if (op.site == site - 1)
                throw ConfigError("observable: duplicate site " + std::to_string(site));
        term.ops.push_back({site - 1, p});
    }
    if (term.ops.empty()) throw ConfigError("observable: empty specification");
    return term;
}

}  // namespace qdisc::shadows
