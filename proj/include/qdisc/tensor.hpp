#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "qdisc/errors.hpp"
#include "qdisc/rng.hpp"

namespace qdisc::ad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major f64 tensor. Rank-0 (empty shape) is a scalar.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }
    static Tensor full(Shape s, double v) {
        auto n = numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor randn(Shape s, rng::Engine& eng, double stddev = 1.0) {
        Tensor t = zeros(std::move(s));
        for (auto& v : t.data) v = stddev * eng.normal();
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double item() const {
        if (data.size() != 1) throw ShapeError("item: tensor " + shape_str(shape) + " is not a scalar");
        return data[0];
    }

    double& at(std::initializer_list<std::int64_t> idx) {
        std::int64_t off = 0;
        std::size_t k = 0;
        for (auto i : idx) {
            off = off * shape[k] + i;
            ++k;
        }
        return data[static_cast<std::size_t>(off)];
    }
    double at(std::initializer_list<std::int64_t> idx) const {
        return const_cast<Tensor*>(this)->at(idx);
    }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace qdisc::ad
