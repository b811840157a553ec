#pragma once

#include <cmath>
#include <optional>

#include "hytrec/tensor.hpp"

namespace hytrec {

// Dense projection, weight [d_in x d_out] plus bias [d_out].
struct LinearLayer {
    Tensor weight;
    Tensor bias;

    LinearLayer() = default;
    LinearLayer(Tensor w, Tensor b);

    int64_t in_dim() const { return weight.dim(0); }
    int64_t out_dim() const { return weight.dim(1); }
};

// x [L x d_in] -> x*W + b, rows independent.
Tensor apply_linear(const LinearLayer& layer, const Tensor& x);

struct AttentionOutput {
    Tensor values;                   // [L x d]
    std::optional<Tensor> weights;   // [L x L], softmax path only; row-stochastic
};

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Strictly positive feature map for linear attention: elu(x) + 1.
inline double elu1(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

// Scaled dot-product attention over full-width rows. Materializes the
// weight matrix; intended for moderate L (the model path streams instead).
AttentionOutput softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

// Kernelized attention with the elu+1 feature map applied to q and k.
// Causal form runs the O(L*d^2) running-sum recurrence; the normalizer is
// floored at 1e-6.
Tensor linear_attention_baseline(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

inline constexpr double kLinearAttentionNormFloor = 1e-6;
inline constexpr double kLayerNormEpsilon = 1e-5;

// Per-row standardization followed by the affine (gain, shift); both [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift);

}  // namespace hytrec
