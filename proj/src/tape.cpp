#include "qdisc/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "qdisc/kernels.hpp"

namespace qdisc::ad {

namespace {

const kernels::Ops& K() { return kernels::active(); }

// SeLU constants (self-normalizing networks)
constexpr double kSeluLambda = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const std::int64_t da = i < ra ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
        const std::int64_t db = i < rb ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        out[static_cast<std::size_t>(r - 1 - i)] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `shape` aligned into `out` (0 on broadcast dims).
std::vector<std::int64_t> bcast_strides(const Shape& shape, const Shape& out) {
    const int r = static_cast<int>(out.size()), rs = static_cast<int>(shape.size());
    std::vector<std::int64_t> strides(static_cast<std::size_t>(r), 0);
    std::int64_t acc = 1;
    for (int i = rs - 1; i >= 0; --i) {
        const std::int64_t d = shape[static_cast<std::size_t>(i)];
        const int oi = r - rs + i;
        strides[static_cast<std::size_t>(oi)] = (d == 1) ? 0 : acc;
        acc *= d;
    }
    return strides;
}

// Walk every (offA, offB, offOut-run) of a broadcast pair; fn is called per
// innermost run with base offsets and the two inner step sizes (0 or 1).
template <class Fn>
void bcast_walk(const Shape& out, const std::vector<std::int64_t>& sa,
                const std::vector<std::int64_t>& sb, Fn&& fn) {
    const int r = static_cast<int>(out.size());
    const std::int64_t inner = r > 0 ? out[static_cast<std::size_t>(r - 1)] : 1;
    const std::int64_t ia = r > 0 ? sa[static_cast<std::size_t>(r - 1)] : 0;
    const std::int64_t ib = r > 0 ? sb[static_cast<std::size_t>(r - 1)] : 0;
    std::int64_t outer = 1;
    for (int i = 0; i < r - 1; ++i) outer *= out[static_cast<std::size_t>(i)];
    std::vector<std::int64_t> idx(static_cast<std::size_t>(std::max(0, r - 1)), 0);
    std::int64_t offa = 0, offb = 0, offo = 0;
    for (std::int64_t o = 0; o < outer; ++o) {
        fn(offa, offb, offo, inner, ia, ib);
        offo += inner;
        for (int i = r - 2; i >= 0; --i) {
            auto& ii = idx[static_cast<std::size_t>(i)];
            offa += sa[static_cast<std::size_t>(i)];
            offb += sb[static_cast<std::size_t>(i)];
            if (++ii < out[static_cast<std::size_t>(i)]) break;
            offa -= sa[static_cast<std::size_t>(i)] * out[static_cast<std::size_t>(i)];
            offb -= sb[static_cast<std::size_t>(i)] * out[static_cast<std::size_t>(i)];
            ii = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

Tape::Id binary_op(Tape& t, BinOp op, const char* name, Tape::Id ida, Tape::Id idb) {
    const Tensor& a = t.val(ida);
    const Tensor& b = t.val(idb);
    Tensor out;
    const bool same = a.shape == b.shape;
    if (same) {
        out = Tensor::zeros(a.shape);
        const std::size_t n = a.data.size();
        switch (op) {
            case BinOp::Add: K().add(a.data.data(), b.data.data(), out.data.data(), n); break;
            case BinOp::Sub: K().sub(a.data.data(), b.data.data(), out.data.data(), n); break;
            case BinOp::Mul: K().mul(a.data.data(), b.data.data(), out.data.data(), n); break;
            case BinOp::Div: K().div(a.data.data(), b.data.data(), out.data.data(), n); break;
        }
    } else {
        Shape os = broadcast_shape(name, a.shape, b.shape);
        auto sa = bcast_strides(a.shape, os);
        auto sb = bcast_strides(b.shape, os);
        out = Tensor::zeros(os);
        const double* pa = a.data.data();
        const double* pb = b.data.data();
        double* po = out.data.data();
        bcast_walk(os, sa, sb,
                   [&](std::int64_t oa, std::int64_t ob, std::int64_t oo, std::int64_t len,
                       std::int64_t ia, std::int64_t ib) {
                       for (std::int64_t i = 0; i < len; ++i) {
                           const double av = pa[oa + ia * i];
                           const double bv = pb[ob + ib * i];
                           double r = 0;
                           switch (op) {
                               case BinOp::Add: r = av + bv; break;
                               case BinOp::Sub: r = av - bv; break;
                               case BinOp::Mul: r = av * bv; break;
                               case BinOp::Div: r = av / bv; break;
                           }
                           po[oo + i] = r;
                       }
                   });
    }
    const bool rg = t.requires_grad(ida) || t.requires_grad(idb);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.val(ida);
        const Tensor& bv = tp.val(idb);
        const bool need_a = tp.requires_grad(ida);
        const bool need_b = tp.requires_grad(idb);
        if (av.shape == bv.shape) {
            const std::size_t n = g.data.size();
            if (need_a) {
                auto& ga = tp.grad_buffer(ida);
                switch (op) {
                    case BinOp::Add:
                    case BinOp::Sub: K().axpy(1.0, g.data.data(), ga.data(), n); break;
                    case BinOp::Mul:
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g.data[i] * bv.data[i];
                        break;
                    case BinOp::Div:
                        for (std::size_t i = 0; i < n; ++i) ga[i] += g.data[i] / bv.data[i];
                        break;
                }
            }
            if (need_b) {
                auto& gb = tp.grad_buffer(idb);
                switch (op) {
                    case BinOp::Add: K().axpy(1.0, g.data.data(), gb.data(), n); break;
                    case BinOp::Sub: K().axpy(-1.0, g.data.data(), gb.data(), n); break;
                    case BinOp::Mul:
                        for (std::size_t i = 0; i < n; ++i) gb[i] += g.data[i] * av.data[i];
                        break;
                    case BinOp::Div:
                        for (std::size_t i = 0; i < n; ++i)
                            gb[i] -= g.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
                        break;
                }
            }
            return;
        }
        Shape os = g.shape;
        auto sa = bcast_strides(av.shape, os);
        auto sb = bcast_strides(bv.shape, os);
        const double* pg = g.data.data();
        const double* pa = av.data.data();
        const double* pb = bv.data.data();
        double* ga = need_a ? tp.grad_buffer(ida).data() : nullptr;
        double* gb = need_b ? tp.grad_buffer(idb).data() : nullptr;
        bcast_walk(os, sa, sb,
                   [&](std::int64_t oa, std::int64_t ob, std::int64_t oo, std::int64_t len,
                       std::int64_t ia, std::int64_t ib) {
                       for (std::int64_t i = 0; i < len; ++i) {
                           const double gv = pg[oo + i];
                           const std::int64_t ja = oa + ia * i, jb = ob + ib * i;
                           switch (op) {
                               case BinOp::Add:
                                   if (ga) ga[ja] += gv;
                                   if (gb) gb[jb] += gv;
                                   break;
                               case BinOp::Sub:
                                   if (ga) ga[ja] += gv;
                                   if (gb) gb[jb] -= gv;
                                   break;
                               case BinOp::Mul:
                                   if (ga) ga[ja] += gv * pb[jb];
                                   if (gb) gb[jb] += gv * pa[ja];
                                   break;
                               case BinOp::Div:
                                   if (ga) ga[ja] += gv / pb[jb];
                                   if (gb) gb[jb] -= gv * pa[ja] / (pb[jb] * pb[jb]);
                                   break;
                           }
                       }
                   });
    });
    return self;
}

template <class F, class DF>
Tape::Id unary_op(Tape& t, Tape::Id ida, F f, DF df) {
    const Tensor& a = t.val(ida);
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    const bool rg = t.requires_grad(ida);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.val(ida);
        const Tensor& ov = tp.val(self);
        auto& ga = tp.grad_buffer(ida);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga[i] += g.data[i] * df(av.data[i], ov.data[i]);
    });
    return self;
}

void transpose2d(const double* src, double* dst, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

void Tape::accum(Id id, const std::vector<double>& contrib) {
    auto& buf = grad_buffer(id);
    K().axpy(1.0, contrib.data(), buf.data(), buf.size());
}

void Tape::accum_scaled(Id id, double scale, const std::vector<double>& contrib) {
    auto& buf = grad_buffer(id);
    K().axpy(scale, contrib.data(), buf.data(), buf.size());
}

std::vector<double>& Tape::grad_buffer(Id id) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.data.empty()) g = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g.data;
}

void Tape::backward(Id loss_id) {
    const Tensor& loss = val(loss_id);
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
    grads_.assign(nodes_.size(), Tensor{});
    grads_[static_cast<std::size_t>(loss_id)] = Tensor::full(loss.shape, 1.0);
    for (Id id = loss_id; id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad || !node.backprop) continue;
        if (grads_[static_cast<std::size_t>(id)].data.empty()) continue;  // no influence on loss
        node.backprop(*this);
    }
}

Tape::Id add(Tape& t, Tape::Id a, Tape::Id b) { return binary_op(t, BinOp::Add, "add", a, b); }
Tape::Id sub(Tape& t, Tape::Id a, Tape::Id b) { return binary_op(t, BinOp::Sub, "sub", a, b); }
Tape::Id mul(Tape& t, Tape::Id a, Tape::Id b) { return binary_op(t, BinOp::Mul, "mul", a, b); }
Tape::Id div(Tape& t, Tape::Id a, Tape::Id b) { return binary_op(t, BinOp::Div, "div", a, b); }

Tape::Id scale(Tape& t, Tape::Id a, double s) {
    return unary_op(
        t, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tape::Id add_const(Tape& t, Tape::Id a, double c) {
    return unary_op(
        t, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tape::Id neg(Tape& t, Tape::Id a) { return scale(t, a, -1.0); }

Tape::Id exp_(Tape& t, Tape::Id a) {
    return unary_op(
        t, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tape::Id log_(Tape& t, Tape::Id a) {
    return unary_op(
        t, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tape::Id tanh_(Tape& t, Tape::Id a) {
    return unary_op(
        t, a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tape::Id sigmoid(Tape& t, Tape::Id a) {
    return unary_op(
        t, a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tape::Id relu(Tape& t, Tape::Id a) {
    return unary_op(
        t, a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tape::Id selu(Tape& t, Tape::Id a) {
    return unary_op(
        t, a,
        [](double x) {
            return x > 0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0);
        },
        [](double x, double) {
            return x > 0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
        });
}

Tape::Id square(Tape& t, Tape::Id a) {
    return unary_op(
        t, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tape::Id reshape(Tape& t, Tape::Id a, Shape s) {
    const Tensor& av = t.val(a);
    // allow one -1 wildcard
    std::int64_t known = 1;
    int wild = -1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == -1) {
            if (wild >= 0) throw ShapeError("reshape: more than one -1");
            wild = static_cast<int>(i);
        } else {
            known *= s[i];
        }
    }
    if (wild >= 0) s[static_cast<std::size_t>(wild)] = av.size() / known;
    if (numel(s) != av.size())
        throw ShapeError("reshape: " + shape_str(av.shape) + " to " + shape_str(s));
    Tensor out(s, av.data);
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) { tp.accum(a, tp.grad(self).data); });
    return self;
}

Tape::Id permute(Tape& t, Tape::Id a, const std::vector<int>& axes) {
    const Tensor& av = t.val(a);
    const int r = av.rank();
    if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: axes rank mismatch");
    Shape os(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<std::size_t>(i)] = av.dim(axes[static_cast<std::size_t>(i)]);
    // strides of the input, then reorder so out index walks input directly
    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
        in_strides[static_cast<std::size_t>(i)] =
            in_strides[static_cast<std::size_t>(i + 1)] * av.dim(i + 1);
    std::vector<std::int64_t> walk(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        walk[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    Tensor out = Tensor::zeros(os);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    for (std::int64_t o = 0; o < out.size(); ++o) {
        out.data[static_cast<std::size_t>(o)] = av.data[static_cast<std::size_t>(src)];
        for (int i = r - 1; i >= 0; --i) {
            src += walk[static_cast<std::size_t>(i)];
            if (++idx[static_cast<std::size_t>(i)] < os[static_cast<std::size_t>(i)]) break;
            src -= walk[static_cast<std::size_t>(i)] * os[static_cast<std::size_t>(i)];
            idx[static_cast<std::size_t>(i)] = 0;
        }
    }
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        auto& ga = tp.grad_buffer(a);
        const int rr = static_cast<int>(axes.size());
        std::vector<std::int64_t> idx2(static_cast<std::size_t>(rr), 0);
        std::int64_t src2 = 0;
        const Shape& osh = g.shape;
        for (std::int64_t o = 0; o < g.size(); ++o) {
            ga[static_cast<std::size_t>(src2)] += g.data[static_cast<std::size_t>(o)];
            for (int i = rr - 1; i >= 0; --i) {
                src2 += walk[static_cast<std::size_t>(i)];
                if (++idx2[static_cast<std::size_t>(i)] < osh[static_cast<std::size_t>(i)]) break;
                src2 -= walk[static_cast<std::size_t>(i)] * osh[static_cast<std::size_t>(i)];
                idx2[static_cast<std::size_t>(i)] = 0;
            }
        }
    });
    return self;
}

Tape::Id transpose_last2(Tape& t, Tape::Id a) {
    const int r = t.val(a).rank();
    if (r < 2) throw ShapeError("transpose_last2: rank < 2");
    std::vector<int> axes(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) axes[static_cast<std::size_t>(i)] = i;
    std::swap(axes[static_cast<std::size_t>(r - 1)], axes[static_cast<std::size_t>(r - 2)]);
    return permute(t, a, axes);
}

Tape::Id concat(Tape& t, const std::vector<Tape::Id>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Tensor& first = t.val(parts[0]);
    const int r = first.rank();
    if (axis < 0) axis += r;
    Shape os = first.shape;
    std::int64_t total = 0;
    for (auto id : parts) {
        const Tensor& v = t.val(id);
        if (v.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && v.dim(i) != first.dim(i))
                throw ShapeError("concat: shape mismatch " + shape_str(v.shape) + " vs " +
                                 shape_str(first.shape));
        total += v.dim(axis);
    }
    os[static_cast<std::size_t>(axis)] = total;
    Tensor out = Tensor::zeros(os);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<std::size_t>(i)];
    std::int64_t col_off = 0;
    bool rg = false;
    for (auto id : parts) rg = rg || t.requires_grad(id);
    std::vector<std::int64_t> offsets;
    for (auto id : parts) {
        const Tensor& v = t.val(id);
        const std::int64_t cols = v.dim(axis) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data.data() + o * total * inner + col_off,
                        v.data.data() + o * cols, static_cast<std::size_t>(cols) * sizeof(double));
        offsets.push_back(col_off);
        col_off += cols;
    }
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    auto parts_copy = parts;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        for (std::size_t p = 0; p < parts_copy.size(); ++p) {
            if (!tp.requires_grad(parts_copy[p])) continue;
            const Tensor& v = tp.val(parts_copy[p]);
            const std::int64_t cols = v.dim(axis) * inner;
            auto& gb = tp.grad_buffer(parts_copy[p]);
            for (std::int64_t o = 0; o < outer; ++o)
                K().axpy(1.0, g.data.data() + o * total * inner + offsets[p],
                         gb.data() + o * cols, static_cast<std::size_t>(cols));
        }
    });
    return self;
}

Tape::Id gather_axis(Tape& t, Tape::Id a, int axis, std::vector<std::int64_t> indices) {
    const Tensor& av = t.val(a);
    const int r = av.rank();
    if (axis < 0) axis += r;
    Shape os = av.shape;
    os[static_cast<std::size_t>(axis)] = static_cast<std::int64_t>(indices.size());
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= av.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= av.dim(i);
    const std::int64_t in_cols = av.dim(axis);
    Tensor out = Tensor::zeros(os);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < indices.size(); ++j)
            std::memcpy(out.data.data() + (o * static_cast<std::int64_t>(indices.size()) +
                                           static_cast<std::int64_t>(j)) *
                                              inner,
                        av.data.data() + (o * in_cols + indices[j]) * inner,
                        static_cast<std::size_t>(inner) * sizeof(double));
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=, idx = std::move(indices)](Tape& tp) {
        const Tensor& g = tp.grad(self);
        auto& ga = tp.grad_buffer(a);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < idx.size(); ++j)
                K().axpy(1.0,
                         g.data.data() +
                             (o * static_cast<std::int64_t>(idx.size()) + static_cast<std::int64_t>(j)) * inner,
                         ga.data() + (o * in_cols + idx[j]) * inner,
                         static_cast<std::size_t>(inner));
    });
    return self;
}

Tape::Id sum_all(Tape& t, Tape::Id a) {
    const Tensor& av = t.val(a);
    Tensor out = Tensor::scalar(K().sum(av.data.data(), av.data.size()));
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const double g = tp.grad(self).data[0];
        auto& ga = tp.grad_buffer(a);
        for (auto& v : ga) v += g;
    });
    return self;
}

Tape::Id mean_all(Tape& t, Tape::Id a) {
    const double inv = 1.0 / static_cast<double>(t.val(a).size());
    return scale(t, sum_all(t, a), inv);
}

Tape::Id sum_axis(Tape& t, Tape::Id a, int axis) {
    const Tensor& av = t.val(a);
    const int r = av.rank();
    if (axis < 0) axis += r;
    Shape os;
    for (int i = 0; i < r; ++i)
        if (i != axis) os.push_back(av.dim(i));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= av.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= av.dim(i);
    const std::int64_t d = av.dim(axis);
    Tensor out = Tensor::zeros(os);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < d; ++k)
            K().axpy(1.0, av.data.data() + (o * d + k) * inner, out.data.data() + o * inner,
                     static_cast<std::size_t>(inner));
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        auto& ga = tp.grad_buffer(a);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t k = 0; k < d; ++k)
                K().axpy(1.0, g.data.data() + o * inner, ga.data() + (o * d + k) * inner,
                         static_cast<std::size_t>(inner));
    });
    return self;
}

Tape::Id mean_axis(Tape& t, Tape::Id a, int axis) {
    const int r = t.val(a).rank();
    const int ax = axis < 0 ? axis + r : axis;
    const double inv = 1.0 / static_cast<double>(t.val(a).dim(ax));
    return scale(t, sum_axis(t, a, ax), inv);
}

Tape::Id matmul(Tape& t, Tape::Id a, Tape::Id b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.rank() < 2 || bv.rank() < 2) throw ShapeError("matmul: inputs must be rank >= 2");
    const std::int64_t m = av.dim(av.rank() - 2), ka = av.dim(av.rank() - 1);
    const std::int64_t kb = bv.dim(bv.rank() - 2), n = bv.dim(bv.rank() - 1);
    if (ka != kb)
        throw ShapeError("matmul: inner dims differ, " + shape_str(av.shape) + " x " +
                         shape_str(bv.shape));
    Shape ba(av.shape.begin(), av.shape.end() - 2), bb(bv.shape.begin(), bv.shape.end() - 2);
    Shape batch;
    if (ba == bb)
        batch = ba;
    else if (ba.empty())
        batch = bb;
    else if (bb.empty())
        batch = ba;
    else
        throw ShapeError("matmul: batch dims differ, " + shape_str(av.shape) + " x " +
                         shape_str(bv.shape));
    const std::int64_t nb = numel(batch);
    const bool abatch = !ba.empty() || batch.empty();
    const bool bbatch = !bb.empty() || batch.empty();
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    Tensor out = Tensor::zeros(os);
    for (std::int64_t q = 0; q < nb; ++q) {
        const double* pa = av.data.data() + (abatch ? q * m * ka : 0);
        const double* pb = bv.data.data() + (bbatch ? q * ka * n : 0);
        K().gemm_acc(pa, pb, out.data.data() + q * m * n, static_cast<std::size_t>(m),
                     static_cast<std::size_t>(ka), static_cast<std::size_t>(n));
    }
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& A = tp.val(a);
        const Tensor& B = tp.val(b);
        const bool need_a = tp.requires_grad(a);
        const bool need_b = tp.requires_grad(b);
        std::vector<double> scratch;
        if (need_a) {
            auto& ga = tp.grad_buffer(a);
            scratch.resize(static_cast<std::size_t>(n * ka));
            for (std::int64_t q = 0; q < nb; ++q) {
                const double* pb = B.data.data() + (bbatch ? q * ka * n : 0);
                transpose2d(pb, scratch.data(), ka, n);  // (n, ka)
                K().gemm_acc(g.data.data() + q * m * n, scratch.data(),
                             ga.data() + (abatch ? q * m * ka : 0), static_cast<std::size_t>(m),
                             static_cast<std::size_t>(n), static_cast<std::size_t>(ka));
            }
        }
        if (need_b) {
            auto& gb = tp.grad_buffer(b);
            scratch.resize(static_cast<std::size_t>(m * ka));
            for (std::int64_t q = 0; q < nb; ++q) {
                const double* pa = A.data.data() + (abatch ? q * m * ka : 0);
                transpose2d(pa, scratch.data(), m, ka);  // (ka, m)
                K().gemm_acc(scratch.data(), g.data.data() + q * m * n,
                             gb.data() + (bbatch ? q * ka * n : 0), static_cast<std::size_t>(ka),
                             static_cast<std::size_t>(m), static_cast<std::size_t>(n));
            }
        }
    });
    return self;
}

namespace {

// rows = numel/last; applies softmax or log-softmax per row
Tensor rowwise_softmax(const Tensor& a, bool log_form) {
    Tensor out = Tensor::zeros(a.shape);
    const std::int64_t d = a.rank() > 0 ? a.dim(a.rank() - 1) : 1;
    const std::int64_t rows = a.size() / d;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.data.data() + r * d;
        double* y = out.data.data() + r * d;
        double mx = x[0];
        for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
        double s = 0;
        for (std::int64_t i = 0; i < d; ++i) s += std::exp(x[i] - mx);
        if (log_form) {
            const double lse = mx + std::log(s);
            for (std::int64_t i = 0; i < d; ++i) y[i] = x[i] - lse;
        } else {
            for (std::int64_t i = 0; i < d; ++i) y[i] = std::exp(x[i] - mx) / s;
        }
    }
    return out;
}

}  // namespace

Tape::Id softmax_last(Tape& t, Tape::Id a) {
    Tensor out = rowwise_softmax(t.val(a), false);
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& p = tp.val(self);
        auto& ga = tp.grad_buffer(a);
        const std::int64_t d = p.dim(p.rank() - 1);
        const std::int64_t rows = p.size() / d;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* pr = p.data.data() + r * d;
            const double* gr = g.data.data() + r * d;
            double s = 0;
            for (std::int64_t i = 0; i < d; ++i) s += gr[i] * pr[i];
            for (std::int64_t i = 0; i < d; ++i) ga[static_cast<std::size_t>(r * d + i)] += pr[i] * (gr[i] - s);
        }
    });
    return self;
}

Tape::Id log_softmax_last(Tape& t, Tape::Id a) {
    Tensor out = rowwise_softmax(t.val(a), true);
    const bool rg = t.requires_grad(a);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& lp = tp.val(self);
        auto& ga = tp.grad_buffer(a);
        const std::int64_t d = lp.dim(lp.rank() - 1);
        const std::int64_t rows = lp.size() / d;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* lr = lp.data.data() + r * d;
            const double* gr = g.data.data() + r * d;
            double s = 0;
            for (std::int64_t i = 0; i < d; ++i) s += gr[i];
            for (std::int64_t i = 0; i < d; ++i)
                ga[static_cast<std::size_t>(r * d + i)] += gr[i] - std::exp(lr[i]) * s;
        }
    });
    return self;
}

Tape::Id causal_softmax(Tape& t, Tape::Id scores) {
    const Tensor& a = t.val(scores);
    const int r = a.rank();
    if (r < 2 || a.dim(r - 1) != a.dim(r - 2))
        throw ShapeError("causal_softmax: expected (..., I, I), got " + shape_str(a.shape));
    const std::int64_t I = a.dim(r - 1);
    const std::int64_t blocks = a.size() / (I * I);
    Tensor out = Tensor::zeros(a.shape);
    for (std::int64_t b = 0; b < blocks; ++b) {
        for (std::int64_t i = 0; i < I; ++i) {
            const double* x = a.data.data() + (b * I + i) * I;
            double* y = out.data.data() + (b * I + i) * I;
            double mx = x[0];
            for (std::int64_t j = 1; j <= i; ++j) mx = std::max(mx, x[j]);
            double s = 0;
            for (std::int64_t j = 0; j <= i; ++j) s += std::exp(x[j] - mx);
            for (std::int64_t j = 0; j <= i; ++j) y[j] = std::exp(x[j] - mx) / s;
            // entries j > i stay exactly zero
        }
    }
    const bool rg = t.requires_grad(scores);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& p = tp.val(self);
        auto& ga = tp.grad_buffer(scores);
        for (std::int64_t b = 0; b < blocks; ++b) {
            for (std::int64_t i = 0; i < I; ++i) {
                const double* pr = p.data.data() + (b * I + i) * I;
                const double* gr = g.data.data() + (b * I + i) * I;
                double s = 0;
                for (std::int64_t j = 0; j <= i; ++j) s += gr[j] * pr[j];
                for (std::int64_t j = 0; j <= i; ++j)
                    ga[static_cast<std::size_t>((b * I + i) * I + j)] += pr[j] * (gr[j] - s);
            }
        }
    });
    return self;
}

Tape::Id layer_norm(Tape& t, Tape::Id x, Tape::Id gain, Tape::Id bias, double eps) {
    const Tensor& xv = t.val(x);
    const Tensor& gv = t.val(gain);
    const Tensor& bv = t.val(bias);
    const std::int64_t d = xv.dim(xv.rank() - 1);
    if (gv.size() != d || bv.size() != d)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gv.shape) + "/" + shape_str(bv.shape) +
                         " do not match feature dim " + std::to_string(d));
    const std::int64_t rows = xv.size() / d;
    Tensor out = Tensor::zeros(xv.shape);
    auto xhat = std::make_shared<std::vector<double>>(xv.data.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xv.data.data() + r * d;
        double mean = 0;
        for (std::int64_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<double>(d);
        double var = 0;
        for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t i = 0; i < d; ++i) {
            const double xh = (xr[i] - mean) * is;
            (*xhat)[static_cast<std::size_t>(r * d + i)] = xh;
            out.data[static_cast<std::size_t>(r * d + i)] = xh * gv.data[static_cast<std::size_t>(i)] + bv.data[static_cast<std::size_t>(i)];
        }
    }
    const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& gnv = tp.val(gain);
        const bool need_x = tp.requires_grad(x);
        const bool need_g = tp.requires_grad(gain);
        const bool need_b = tp.requires_grad(bias);
        double* gx = need_x ? tp.grad_buffer(x).data() : nullptr;
        double* gg = need_g ? tp.grad_buffer(gain).data() : nullptr;
        double* gb = need_b ? tp.grad_buffer(bias).data() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* gr = g.data.data() + r * d;
            const double* xh = xhat->data() + r * d;
            const double is = (*inv_std)[static_cast<std::size_t>(r)];
            double mu = 0, mxh = 0;
            for (std::int64_t i = 0; i < d; ++i) {
                const double u = gr[i] * gnv.data[static_cast<std::size_t>(i)];
                mu += u;
                mxh += u * xh[i];
            }
            mu /= static_cast<double>(d);
            mxh /= static_cast<double>(d);
            for (std::int64_t i = 0; i < d; ++i) {
                if (gx) {
                    const double u = gr[i] * gnv.data[static_cast<std::size_t>(i)];
                    gx[r * d + i] += (u - mu - xh[i] * mxh) * is;
                }
                if (gg) gg[i] += gr[i] * xh[i];
                if (gb) gb[i] += gr[i];
            }
        }
    });
    return self;
}

Tape::Id embedding(Tape& t, Tape::Id table, const Tensor& indices) {
    const Tensor& tab = t.val(table);
    if (tab.rank() != 2) throw ShapeError("embedding: table must be rank 2");
    const std::int64_t V = tab.dim(0), d = tab.dim(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>(indices.data.size());
    for (std::size_t i = 0; i < indices.data.size(); ++i) {
        const auto v = static_cast<std::int64_t>(std::llround(indices.data[i]));
        if (v < 0 || v >= V)
            throw ShapeError("embedding: index " + std::to_string(v) + " out of range [0," +
                             std::to_string(V) + ")");
        (*idx)[i] = v;
    }
    Shape os = indices.shape;
    os.push_back(d);
    Tensor out = Tensor::zeros(os);
    for (std::size_t i = 0; i < idx->size(); ++i)
        std::memcpy(out.data.data() + static_cast<std::int64_t>(i) * d,
                    tab.data.data() + (*idx)[i] * d, static_cast<std::size_t>(d) * sizeof(double));
    const bool rg = t.requires_grad(table);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        auto& gt = tp.grad_buffer(table);
        for (std::size_t i = 0; i < idx->size(); ++i)
            K().axpy(1.0, g.data.data() + static_cast<std::int64_t>(i) * d,
                     gt.data() + (*idx)[i] * d, static_cast<std::size_t>(d));
    });
    return self;
}

Tape::Id conv2d_circular(Tape& t, Tape::Id x, Tape::Id w, Tape::Id b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    if (xv.rank() != 4 || wv.rank() != 4)
        throw ShapeError("conv2d_circular: x must be (B,H,W,Cin), w (kh,kw,Cin,Cout)");
    const std::int64_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Cin = xv.dim(3);
    const std::int64_t kh = wv.dim(0), kw = wv.dim(1), Cout = wv.dim(3);
    if (wv.dim(2) != Cin)
        throw ShapeError("conv2d_circular: Cin mismatch " + shape_str(xv.shape) + " vs " +
                         shape_str(wv.shape));
    if (bv.size() != Cout) throw ShapeError("conv2d_circular: bias size mismatch");
    const std::int64_t patch = kh * kw * Cin;
    const std::int64_t pixels = B * H * W;
    // source index map (pixel, kernel-slot) -> flat x offset of the Cin run
    auto srcmap = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(pixels * kh * kw));
    auto patches = std::make_shared<std::vector<double>>(static_cast<std::size_t>(pixels * patch));
    std::int64_t pi = 0;
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t hh = 0; hh < H; ++hh)
            for (std::int64_t ww = 0; ww < W; ++ww, ++pi) {
                std::int64_t slot = 0;
                for (std::int64_t dh = 0; dh < kh; ++dh)
                    for (std::int64_t dw = 0; dw < kw; ++dw, ++slot) {
                        const std::int64_t sh = ((hh + dh - kh / 2) % H + H) % H;
                        const std::int64_t sw = ((ww + dw - kw / 2) % W + W) % W;
                        const std::int64_t off = ((bb * H + sh) * W + sw) * Cin;
                        (*srcmap)[static_cast<std::size_t>(pi * kh * kw + slot)] = off;
                        std::memcpy(patches->data() + pi * patch + slot * Cin,
                                    xv.data.data() + off,
                                    static_cast<std::size_t>(Cin) * sizeof(double));
                    }
            }
    Tensor out = Tensor::zeros({B, H, W, Cout});
    K().gemm_acc(patches->data(), wv.data.data(), out.data.data(),
                 static_cast<std::size_t>(pixels), static_cast<std::size_t>(patch),
                 static_cast<std::size_t>(Cout));
    for (std::int64_t p = 0; p < pixels; ++p)
        K().add(out.data.data() + p * Cout, bv.data.data(), out.data.data() + p * Cout,
                static_cast<std::size_t>(Cout));
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    Tape::Id self = t.emit(std::move(out), rg, nullptr);
    if (!rg) return self;
    t.set_backprop(self, [=](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& wval = tp.val(w);
        if (tp.requires_grad(b)) {
            auto& gb = tp.grad_buffer(b);
            for (std::int64_t p = 0; p < pixels; ++p)
                K().axpy(1.0, g.data.data() + p * Cout, gb.data(), static_cast<std::size_t>(Cout));
        }
        if (tp.requires_grad(w)) {
            auto& gw = tp.grad_buffer(w);
            std::vector<double> pt(static_cast<std::size_t>(patch * pixels));
            transpose2d(patches->data(), pt.data(), pixels, patch);
            K().gemm_acc(pt.data(), g.data.data(), gw.data(), static_cast<std::size_t>(patch),
                         static_cast<std::size_t>(pixels), static_cast<std::size_t>(Cout));
        }
        if (tp.requires_grad(x)) {
            auto& gx = tp.grad_buffer(x);
            std::vector<double> wt(static_cast<std::size_t>(Cout * patch));
            transpose2d(wval.data.data(), wt.data(), patch, Cout);
            std::vector<double> dpatches(static_cast<std::size_t>(pixels * patch), 0.0);
            K().gemm_acc(g.data.data(), wt.data(), dpatches.data(),
                         static_cast<std::size_t>(pixels), static_cast<std::size_t>(Cout),
                         static_cast<std::size_t>(patch));
            for (std::int64_t p = 0; p < pixels; ++p) {
                for (std::int64_t slot = 0; slot < kh * kw; ++slot) {
                    const std::int64_t off = (*srcmap)[static_cast<std::size_t>(p * kh * kw + slot)];
                    K().axpy(1.0, dpatches.data() + p * patch + slot * Cin, gx.data() + off,
                             static_cast<std::size_t>(Cin));
                }
            }
        }
    });
    return self;
}

void check_finite(const Tensor& v, const char* what) {
    for (double x : v.data)
        if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
}

}  // namespace qdisc::ad
