#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "qdisc/tensor.hpp"

namespace qdisc::ad {

// Reverse-mode autodiff on a dynamic tape rebuilt every step. Nodes own their
// forward values; gradients are allocated during backward(). Op builders are
// free functions below; each records a closure that pulls the node's gradient
// and accumulates into its inputs.
class Tape {
public:
    using Id = std::int32_t;

    Id leaf(Tensor value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), requires_grad, nullptr});
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id emit(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
        nodes_.push_back(Node{std::move(value), requires_grad, std::move(backprop)});
        return static_cast<Id>(nodes_.size() - 1);
    }

    // Ops emit the node first so the closure can capture its own id.
    void set_backprop(Id id, std::function<void(Tape&)> backprop) {
        nodes_[static_cast<std::size_t>(id)].backprop = std::move(backprop);
    }

    const Tensor& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    // Valid after backward(); zero tensor if the node never received gradient.
    const Tensor& grad(Id id) {
        if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.data.empty()) g = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
        return g;
    }

    // Accumulate a contribution into a node's gradient buffer.
    void accum(Id id, const std::vector<double>& contrib);
    void accum_scaled(Id id, double scale, const std::vector<double>& contrib);
    std::vector<double>& grad_buffer(Id id);

    void backward(Id loss_id);

    std::size_t size() const { return nodes_.size(); }
    void clear() {
        nodes_.clear();
        grads_.clear();
    }

private:
    struct Node {
        Tensor value;
        bool requires_grad;
        std::function<void(Tape&)> backprop;
    };
    // deque keeps val()/grad() references stable while later ops are emitted
    std::deque<Node> nodes_;
    std::deque<Tensor> grads_;
};

// --- elementwise binary (NumPy-style trailing broadcast) ---
Tape::Id add(Tape& t, Tape::Id a, Tape::Id b);
Tape::Id sub(Tape& t, Tape::Id a, Tape::Id b);
Tape::Id mul(Tape& t, Tape::Id a, Tape::Id b);
Tape::Id div(Tape& t, Tape::Id a, Tape::Id b);

// --- scalar fused forms ---
Tape::Id scale(Tape& t, Tape::Id a, double s);
Tape::Id add_const(Tape& t, Tape::Id a, double c);
Tape::Id neg(Tape& t, Tape::Id a);

// --- unary elementwise ---
Tape::Id exp_(Tape& t, Tape::Id a);
Tape::Id log_(Tape& t, Tape::Id a);
Tape::Id tanh_(Tape& t, Tape::Id a);
Tape::Id sigmoid(Tape& t, Tape::Id a);
Tape::Id relu(Tape& t, Tape::Id a);
Tape::Id selu(Tape& t, Tape::Id a);
Tape::Id square(Tape& t, Tape::Id a);

// --- structure ---
Tape::Id reshape(Tape& t, Tape::Id a, Shape s);
Tape::Id permute(Tape& t, Tape::Id a, const std::vector<int>& axes);
Tape::Id transpose_last2(Tape& t, Tape::Id a);
Tape::Id concat(Tape& t, const std::vector<Tape::Id>& parts, int axis);
// select given indices along an axis (indices are data, not differentiable)
Tape::Id gather_axis(Tape& t, Tape::Id a, int axis, std::vector<std::int64_t> indices);

// --- reductions ---
Tape::Id sum_all(Tape& t, Tape::Id a);
Tape::Id mean_all(Tape& t, Tape::Id a);
Tape::Id sum_axis(Tape& t, Tape::Id a, int axis);   // removes the axis
Tape::Id mean_axis(Tape& t, Tape::Id a, int axis);  // removes the axis

// --- linear algebra ---
// (..., m, k) x (..., k, n); batch dims must match, or one operand is rank-2.
Tape::Id matmul(Tape& t, Tape::Id a, Tape::Id b);

// --- nn primitives ---
Tape::Id softmax_last(Tape& t, Tape::Id a);
Tape::Id log_softmax_last(Tape& t, Tape::Id a);
// scores (..., I, I): row i sees columns j <= i only; masked entries are
// excluded from the normalization, outputs and gradients there are exact zero
Tape::Id causal_softmax(Tape& t, Tape::Id scores);
Tape::Id layer_norm(Tape& t, Tape::Id x, Tape::Id gain, Tape::Id bias, double eps = 1e-5);
// table (V, d), indices flat values in [0, V) -> out shape indices.shape + {d}
Tape::Id embedding(Tape& t, Tape::Id table, const Tensor& indices);
// x (B, H, W, Cin) with circular padding, w (kh, kw, Cin, Cout), bias (Cout)
Tape::Id conv2d_circular(Tape& t, Tape::Id x, Tape::Id w, Tape::Id b);

// Finite-value guard: throws NumericError naming `what` if any entry is not finite.
void check_finite(const Tensor& v, const char* what);

}  // namespace qdisc::ad
