#pragma once

#include <vector>

#include "hytrec/ops.hpp"
#include "hytrec/tensor.hpp"

namespace hytrec {

// Parameters of one temporal-aware delta layer over width-d features.
struct TadnLayerParams {
    LinearLayer gate_proj;         // [2d x d], vector gate from concat(h, dh)
    LinearLayer gate_scalar_proj;  // [d x 1], scalar gate for the state update
    LinearLayer q_proj;            // [d x d]
    LinearLayer k_proj;            // [d x d]
    LinearLayer v_proj;            // [d x d]
    LinearLayer beta_proj;         // [d x 1], writing strength
    LinearLayer out_proj;          // [d x d], applied after head concat
    Tensor norm_gain;              // [d], pre-norm affine
    Tensor norm_shift;             // [d]
    double alpha = 0.5;            // balance between dynamic and static gate, in [0,1]
    double decay_period = 86400.0 * 7;  // T, same unit as timestamps
    int64_t n_heads = 1;

    int64_t width() const { return q_proj.in_dim(); }
    void validate() const;
};

// Per-head hidden state of the gated delta recurrence.
// With unit keys and g*beta in [0,1] the erase factor is non-expanding, so
// ||s||_F stays below the running sum of beta_i * ||v_i||.
struct TadnState {
    Tensor s;  // [d_head x d_head]
};

// Everything Eq-level gating produces for a length-L window.
struct GateComponents {
    Tensor tau;       // [L], temporal decay, in (0,1]
    Tensor h_bar;     // [L x d], causal running mean of h
    Tensor delta_h;   // [L x d], h - h_bar
    Tensor g_static;  // [L], similarity-to-mean gate, in (0,1)
    Tensor g_vec;     // [L x d], fusion gate, in [0,1]
    Tensor g_scalar;  // [L], state-update gate, in [0,1]
};

// tau_t = exp(-(current_time - event_time_t) / T).
// Errors on negative elapsed time or non-positive T.
Tensor compute_temporal_decay(const Tensor& event_times, double current_time, double T);

// Gating per the layer's projections; h is the (normalized) layer input.
GateComponents compute_gates(const Tensor& h, const Tensor& tau, const TadnLayerParams& params);

// h~ = g_vec * delta_h + (1 - g_vec) * h, elementwise.
Tensor fuse_features(const Tensor& h, const GateComponents& gates);

// Sequential gated delta rule over fused features:
//   S_t = S_{t-1} (I - g_t beta_t k_t k_t') + beta_t v_t k_t',  o_t = S_t q_t
// q/k/v/beta are projected from h_fused; keys are L2-normalized per head.
// O(L * d_head^2) per head. When states_out is non-null it receives the
// per-step state for every head (head-major: h * L + t).
Tensor tadn_scan(const Tensor& h_fused, const GateComponents& gates,
                 const TadnLayerParams& params, std::vector<TadnState>* states_out = nullptr);

// Naive expansion of the same recurrence through the composite decay mask
//   o_t = sum_{i<=t} beta_i v_i (k_i' D(t,i) q_t),
//   D(t,i) = prod_{j=i+1..t} (I - g_j beta_j k_j k_j')   (factors left to right)
// built with explicit matrix products. Verification oracle only.
Tensor tadn_closed_form(const Tensor& h_fused, const GateComponents& gates,
                        const TadnLayerParams& params);

// Full layer: pre-norm, decay, gates, fusion, scan, output projection,
// residual add.
Tensor tadn_layer_forward(const Tensor& h, const Tensor& event_times, double current_time,
                          const TadnLayerParams& params);

namespace detail {

// Shared projection step for scan and closed form: q, k (per-head
// normalized), v [L x d]; beta, erase coefficient g*beta [L].
struct ScanInputs {
    Tensor q, k, v;
    Tensor beta;
    Tensor erase;  // g_scalar * beta
};

ScanInputs project_scan_inputs(const Tensor& h_fused, const GateComponents& gates,
                               const TadnLayerParams& params);

}  // namespace detail

}  // namespace hytrec
