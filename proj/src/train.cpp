#include "hytrec/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "hytrec/eval.hpp"

namespace hytrec {

void TrainConfig::validate() const {
    HYT_CHECK_CONFIG(learning_rate > 0.0, "learning_rate must be positive");
    HYT_CHECK_CONFIG(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0,1)");
    HYT_CHECK_CONFIG(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0,1)");
    HYT_CHECK_CONFIG(adam_epsilon > 0.0, "adam_epsilon must be positive");
    HYT_CHECK_CONFIG(batch_size >= 1, "batch_size must be >= 1");
    HYT_CHECK_CONFIG(epochs >= 0, "epochs must be >= 0");
    HYT_CHECK_CONFIG(valid_k >= 1, "valid_k must be >= 1");
}

double next_item_loss(const Tensor& scores, int64_t target) {
    HYT_CHECK_DATA(target >= 0 && target < scores.size(), "target ", target,
                   " outside vocabulary of ", scores.size());
    double max_s = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < scores.size(); ++i) max_s = std::max(max_s, scores(i));
    double sum = 0.0;
    for (int64_t i = 0; i < scores.size(); ++i) sum += std::exp(scores(i) - max_s);
    return max_s + std::log(sum) - scores(target);
}

void AdamState::init(const std::vector<Parameter*>& params) {
    m.clear();
    v.clear();
    for (const Parameter* p : params) {
        m.emplace_back(p->value.shape());
        v.emplace_back(p->value.shape());
    }
    step = 0;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const TrainConfig& config) {
    HYT_CHECK(Error, state.m.size() == params.size(),
              "optimizer state does not match parameter list");
    if (config.grad_clip_norm > 0.0) {
        double norm_sq = 0.0;
        for (const Parameter* p : params) {
            for (int64_t i = 0; i < p->grad.size(); ++i) norm_sq += p->grad(i) * p->grad(i);
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > config.grad_clip_norm) {
            const double scale = config.grad_clip_norm / norm;
            for (Parameter* p : params) {
                for (double& g : p->grad) g *= scale;
            }
        }
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter* p = params[i];
        HYT_CHECK_SHAPE(state.m[i].same_shape(p->grad), "optimizer state shape mismatch for ",
                        p->name);
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (int64_t j = 0; j < p->grad.size(); ++j) {
            const double g = p->grad(j);
            m(j) = config.adam_beta1 * m(j) + (1.0 - config.adam_beta1) * g;
            v(j) = config.adam_beta2 * v(j) + (1.0 - config.adam_beta2) * g * g;
            const double m_hat = m(j) / bc1;
            const double v_hat = v(j) / bc2;
            p->value(j) -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
        }
        p->value.ensure_finite(p->name.c_str());
        p->zero_grad();
    }
}

ad::Var sample_loss(const HyTRecModel& model, ad::Tape& tape, const BoundParams& bound,
                    const DecomposedSequence& sample) {
    ad::Var scores = model.score_sample(tape, bound, sample.long_items, sample.long_times,
                                        sample.short_items, sample.target_time);
    return ad::cross_entropy(scores, sample.target_item);
}

TrainResult train_loop(HyTRecModel& model, const DatasetSplit& split, const TrainConfig& config,
                       const TrainLoopOptions& options) {
    config.validate();
    HYT_CHECK_DATA(!split.train.empty(), "train split is empty");

    std::vector<Parameter*> params = model.parameters();
    TrainState state;
    Rng rng(config.shuffle_seed);
    if (options.resume) {
        state = *options.resume;
        HYT_CHECK(Error, state.adam.initialized(), "resume state has no optimizer moments");
        rng.load_state(state.rng_state);
    } else {
        state.adam.init(params);
        for (Parameter* p : params) p->zero_grad();
    }

    TrainResult result;
    for (int64_t epoch = state.next_epoch; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Batch> batches =
            make_batches(split.train, config.batch_size, model.config().max_seq_len, rng);
        double loss_sum = 0.0;
        int64_t n_samples = 0;
        for (const Batch& batch : batches) {
            const double inv_rows = 1.0 / static_cast<double>(batch.n_rows);
            for (int64_t r = 0; r < batch.n_rows; ++r) {
                ad::Tape tape(/*recording=*/true);
                BoundParams bound = model.bind(tape);
                ad::Var loss = sample_loss(model, tape, bound, batch.row(r));
                const double lv = loss.value()(0);
                HYT_CHECK(NumericError, std::isfinite(lv), "non-finite training loss (", lv,
                          ") at epoch ", epoch, ", sample ", n_samples,
                          "; lower the learning rate or enable clipping");
                loss_sum += lv;
                ++n_samples;
                tape.backward(loss, inv_rows);
            }
            adam_step(params, state.adam, config);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(n_samples);
        if (!split.valid.empty()) {
            EvalSummary summary = evaluate_model(model, split.valid, {config.valid_k});
            record.valid_hr_at_k = summary.hr.at(config.valid_k);
            record.valid_ndcg_at_k = summary.ndcg.at(config.valid_k);
        }
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.epochs.push_back(record);
        if (options.on_epoch) options.on_epoch(record);

        // New best by validation hit rate; without a validation split the
        // lowest training loss wins.
        const double metric =
            split.valid.empty() ? -record.train_loss : record.valid_hr_at_k;
        const bool is_best = result.best_epoch < 0 || metric > result.best_metric;
        if (is_best) {
            result.best_epoch = epoch;
            result.best_metric = metric;
        }
        state.next_epoch = epoch + 1;
        state.rng_state = rng.save_state();
        if (options.on_snapshot) options.on_snapshot(state, is_best);
    }
    return result;
}

}  // namespace hytrec
