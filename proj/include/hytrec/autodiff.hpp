#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hytrec/tensor.hpp"

namespace hytrec {

// A trainable tensor. grad has the same shape as value and is accumulated
// by Tape::backward; the optimizer consumes and clears it.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(0.0); }
};

namespace ad {

class Tape;

// Handle to a tensor recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;

    const Tensor& value() const;
    // Gradient after backward(); empty tensor if this node never received one.
    const Tensor& grad() const;
};

// Reverse-mode tape over tensor-granular operations. One forward pass per
// use; backward() runs the recorded closures in reverse and flushes leaf
// gradients into their Parameters. With recording disabled the same ops
// compute values only, which is the inference path.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

    Var leaf(Tensor value);
    Var param(Parameter& p);

    // Seeds d(root)/d(root) = seed and accumulates gradients for every
    // contributing node; root must be scalar.
    void backward(Var root, double seed = 1.0);

    void reset();

    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        std::vector<int32_t> parents;
        std::function<void(Tape&, int32_t)> backward;
        Parameter* parameter = nullptr;
        bool needs_grad = false;
    };

    Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

    // Gradient buffer of `id`, allocated on first use.
    Tensor& grad_acc(int32_t id);

    int32_t push(Tensor value, std::vector<int32_t> parents,
                 std::function<void(Tape&, int32_t)> backward_fn, Parameter* parameter = nullptr);

private:
    std::vector<Node> nodes_;
    bool recording_ = true;
};

// ---- elementwise / shape ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_n(const std::vector<Var>& xs);
Var sum_all(Var x);                                  // scalar sum of all elements
Var affine_scalar(Var x, double mul, double shift);  // mul*x + shift
Var sigmoid(Var x);
Var silu(Var x);
Var elu1(Var x);

// ---- linear algebra ----
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);                    // a * b'
Var affine(Var x, Var w, Var b);                // x[Lxdi] w[dixdo] + b[do]
Var affine_vec(Var x, Var w, Var b);            // w[dx1], b[1] -> [L]
Var layer_norm(Var x, Var gain, Var shift);
Var l2norm_rows(Var x);

// ---- row/column structure ----
Var causal_mean(Var x);                         // running mean over rows
Var rowdot(Var a, Var b);                       // [L]
Var colscale(Var x, Var s);                     // x[Lxd] scaled per-row by s[L]
Var broadcast_col(Var s, int64_t d);            // s[L] -> [Lxd]
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(Var x, int64_t c0, int64_t c1);
Var slice_rows(Var x, int64_t r0, int64_t r1);
Var embedding_rows(Var table, const std::vector<int64_t>& ids);

// ---- sequence kernels ----
// Causal scaled-dot-product attention over [L x d] rows. Streams rows in
// both directions; never materializes the L x L matrix.
Var softmax_attention_causal(Var q, Var k, Var v);

// Causal kernelized attention; feature map must already be applied to
// q and k (elu1 vars). Normalizer floored as in the value kernel.
Var linear_attention_causal(Var q_feat, Var k_feat, Var v);

// Gated delta recurrence; k rows must be unit-normalized, beta and gate
// are per-position scalars in [0,1].
Var tadn_scan(Var q, Var k, Var v, Var beta, Var gate);

// ---- loss ----
// -log softmax(logits)[target] with log-sum-exp stabilization;
// logits is [1 x V].
Var cross_entropy(Var logits, int64_t target);

}  // namespace ad
}  // namespace hytrec
