#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hytrec/autodiff.hpp"
#include "hytrec/tadn.hpp"

namespace hytrec {

enum class LayerKind { kLinear, kSoftmax };

// Which kernel backs the LINEAR slots of the long stack. The baseline is
// plain kernelized attention without temporal gating or the delta rule;
// it exists for the ablation variants.
enum class LongLinearKind { kTadn, kBaselineLinear };

enum class ScheduleOverride { kNone, kAllSoftmax, kAllLinear };

struct ModelConfig {
    int64_t vocab_size = 0;
    int64_t d_model = 64;
    int64_t n_layers_long = 4;
    int64_t hybrid_ratio = 3;  // r linear layers per softmax layer
    int64_t n_heads = 4;
    int64_t short_window = 16;  // K
    int64_t n_layers_short = 1;
    double alpha = 0.5;
    double decay_period = 86400.0 * 7;
    int64_t max_seq_len = 512;

    bool use_short_branch = true;
    LongLinearKind long_linear_kind = LongLinearKind::kTadn;
    ScheduleOverride schedule_override = ScheduleOverride::kNone;

    void validate() const;
};

struct LayerSchedule {
    std::vector<LayerKind> kinds;

    int64_t softmax_count() const;
};

// Every (ratio+1)-th layer is softmax, counted from the top of the stack
// so the last layer is always softmax; the rest are linear.
LayerSchedule build_layer_schedule(int64_t n_layers, int64_t ratio);

struct FfnParams {
    Parameter *norm_gain, *norm_shift;
    Parameter *w1, *b1, *w2, *b2;
};

struct AttnBlockParams {
    Parameter *norm_gain, *norm_shift;
    Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    FfnParams ffn;
    bool softmax_kind = true;
};

struct TadnBlockParams {
    Parameter *norm_gain, *norm_shift;
    Parameter *gate_w, *gate_b;
    Parameter *gate_scalar_w, *gate_scalar_b;
    Parameter *wq, *bq, *wk, *bk, *wv, *bv;
    Parameter *beta_w, *beta_b;
    Parameter *out_w, *out_b;
    FfnParams ffn;
};

struct LongBlock {
    LayerKind kind;
    // Exactly one of these is populated, depending on kind and
    // long_linear_kind.
    std::unique_ptr<TadnBlockParams> tadn;
    std::unique_ptr<AttnBlockParams> attn;
};

// Parameters bound onto one tape; one entry per model parameter.
using BoundParams = std::unordered_map<const Parameter*, ad::Var>;

class HyTRecModel {
public:
    HyTRecModel(ModelConfig config, uint64_t init_seed, double init_scale = -1.0);

    const ModelConfig& config() const { return config_; }
    const LayerSchedule& schedule() const { return schedule_; }

    std::vector<Parameter*> parameters() const;
    Parameter* find_parameter(const std::string& name) const;
    int64_t parameter_count() const;

    BoundParams bind(ad::Tape& tape) const;

    // Compresses an arbitrarily long history into the last hidden row;
    // empty history yields the zero vector (the cold-start path).
    ad::Var long_branch_forward(ad::Tape& tape, const BoundParams& bound,
                                const std::vector<int64_t>& items,
                                const std::vector<double>& times, double current_time) const;

    // Recent-window branch, at most K items, learned positions.
    ad::Var short_branch_forward(ad::Tape& tape, const BoundParams& bound,
                                 const std::vector<int64_t>& items) const;

    // Gated convex combination of the two branch outputs.
    ad::Var fuse_branches(ad::Tape& tape, const BoundParams& bound, ad::Var long_repr,
                          ad::Var short_repr) const;

    // Tied-embedding logits, [1 x vocab].
    ad::Var predict_scores(ad::Tape& tape, const BoundParams& bound, ad::Var fused) const;

    // Full pipeline for one decomposed sample.
    ad::Var score_sample(ad::Tape& tape, const BoundParams& bound,
                         const std::vector<int64_t>& long_items,
                         const std::vector<double>& long_times,
                         const std::vector<int64_t>& short_items, double current_time) const;

    // Inference-only scores on a fresh non-recording tape.
    Tensor score_sample_value(const std::vector<int64_t>& long_items,
                              const std::vector<double>& long_times,
                              const std::vector<int64_t>& short_items,
                              double current_time) const;

    Parameter* item_embedding() const { return item_embedding_; }

private:
    Parameter* add_param(const std::string& name, std::vector<int64_t> shape);
    FfnParams make_ffn(const std::string& prefix, int64_t expansion);
    std::unique_ptr<AttnBlockParams> make_attn_block(const std::string& prefix, bool softmax_kind);
    std::unique_ptr<TadnBlockParams> make_tadn_block(const std::string& prefix);

    ad::Var ffn_forward(ad::Tape& tape, const BoundParams& bound, const FfnParams& p,
                        ad::Var x) const;
    ad::Var attn_block_forward(ad::Tape& tape, const BoundParams& bound,
                               const AttnBlockParams& p, ad::Var x) const;
    ad::Var tadn_block_forward(ad::Tape& tape, const BoundParams& bound,
                               const TadnBlockParams& p, ad::Var x, const Tensor& tau) const;

    ModelConfig config_;
    LayerSchedule schedule_;
    std::vector<std::unique_ptr<Parameter>> store_;

    Parameter* item_embedding_ = nullptr;
    Parameter* pos_embedding_short_ = nullptr;
    Parameter* branch_gate_w_ = nullptr;
    Parameter* branch_gate_b_ = nullptr;
    std::vector<LongBlock> long_blocks_;
    std::vector<std::unique_ptr<AttnBlockParams>> short_blocks_;
};

}  // namespace hytrec
