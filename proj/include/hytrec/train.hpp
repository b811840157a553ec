#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hytrec/data.hpp"
#include "hytrec/model.hpp"

namespace hytrec {

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int64_t batch_size = 32;
    int64_t epochs = 10;
    double grad_clip_norm = 5.0;  // <= 0 disables clipping
    uint64_t shuffle_seed = 1;
    uint64_t init_seed = 1;
    double init_scale = -1.0;  // < 0 -> 1/sqrt(d_model)
    int64_t valid_k = 10;      // K for per-epoch validation metrics

    void validate() const;
};

// -log softmax(scores)[target], log-sum-exp stabilized. Value-level twin
// of the tape op, used by tests and metrics.
double next_item_loss(const Tensor& scores, int64_t target);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t step = 0;

    void init(const std::vector<Parameter*>& params);
    bool initialized() const { return !m.empty(); }
};

// Bias-corrected Adam over the parameter list; applies global-norm
// clipping first when configured. Consumes and clears the gradients.
void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const TrainConfig& config);

// Everything needed to continue training exactly where it stopped.
struct TrainState {
    AdamState adam;
    int64_t next_epoch = 0;
    std::string rng_state;  // shuffle rng, serialized
};

struct EpochRecord {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double valid_hr_at_k = -1.0;    // < 0 when there is no validation split
    double valid_ndcg_at_k = -1.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> epochs;
    int64_t best_epoch = -1;
    double best_metric = -1.0;
};

struct TrainLoopOptions {
    std::function<void(const EpochRecord&)> on_epoch;
    // Called after each epoch with the captured state; is_best marks a new
    // best validation metric.
    std::function<void(const TrainState&, bool is_best)> on_snapshot;
    const TrainState* resume = nullptr;
};

// Deterministic given (init_seed via the model, shuffle_seed): shuffled
// padded batches, per-sample backward with mean-loss scaling, one Adam
// step per batch. Aborts on non-finite loss.
TrainResult train_loop(HyTRecModel& model, const DatasetSplit& split, const TrainConfig& config,
                       const TrainLoopOptions& options = {});

// One forward for a decomposed sample; shared by training and evaluation.
ad::Var sample_loss(const HyTRecModel& model, ad::Tape& tape, const BoundParams& bound,
                    const DecomposedSequence& sample);

}  // namespace hytrec
