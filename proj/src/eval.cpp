#include "hytrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace hytrec {

RankingResult rank_prediction(const Tensor& scores, int64_t target) {
    const int64_t n = scores.size();
    HYT_CHECK_DATA(target >= 0 && target < n, "target ", target, " outside vocabulary of ", n);
    const double ts = scores(target);
    RankingResult r;
    r.target = target;
    r.n_items = n;
    int64_t tied_before = 0;
    for (int64_t j = 0; j < n; ++j) {
        if (j == target) continue;
        if (scores(j) > ts) {
            ++r.n_above;
        } else if (scores(j) == ts) {
            ++r.n_tied;
            if (j < target) ++tied_before;
        }
    }
    r.rank = r.n_above + tied_before + 1;
    return r;
}

double hit_rate_at_k(const std::vector<RankingResult>& results, int64_t k) {
    HYT_CHECK_DATA(!results.empty(), "hit_rate_at_k over empty results");
    HYT_CHECK_CONFIG(k >= 1, "k must be >= 1");
    int64_t hits = 0;
    for (const RankingResult& r : results) hits += r.rank <= k ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

double ndcg_at_k(const std::vector<RankingResult>& results, int64_t k) {
    HYT_CHECK_DATA(!results.empty(), "ndcg_at_k over empty results");
    HYT_CHECK_CONFIG(k >= 1, "k must be >= 1");
    double total = 0.0;
    for (const RankingResult& r : results) {
        if (r.rank <= k) total += 1.0 / std::log2(static_cast<double>(r.rank) + 1.0);
    }
    return total / static_cast<double>(results.size());
}

double auc(const std::vector<RankingResult>& results) {
    HYT_CHECK_DATA(!results.empty(), "auc over empty results");
    double total = 0.0;
    for (const RankingResult& r : results) {
        HYT_CHECK_DATA(r.n_items >= 2, "auc needs at least 2 items");
        const int64_t below = r.n_items - 1 - r.n_above - r.n_tied;
        total += (static_cast<double>(below) + 0.5 * static_cast<double>(r.n_tied)) /
                 static_cast<double>(r.n_items - 1);
    }
    return total / static_cast<double>(results.size());
}

EvalSummary evaluate_model(const HyTRecModel& model,
                           const std::vector<DecomposedSequence>& samples,
                           const std::vector<int64_t>& k_list) {
    HYT_CHECK_DATA(!samples.empty(), "evaluation split is empty");
    EvalSummary summary;
    summary.results.reserve(samples.size());
    double total_seconds = 0.0;
    for (const DecomposedSequence& s : samples) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor scores = model.score_sample_value(s.long_items, s.long_times, s.short_items,
                                                 s.target_time);
        total_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        summary.results.push_back(rank_prediction(scores, s.target_item));
    }
    summary.n_predictions = static_cast<int64_t>(samples.size());
    summary.mean_latency_seconds = total_seconds / static_cast<double>(samples.size());
    for (int64_t k : k_list) {
        summary.hr[k] = hit_rate_at_k(summary.results, k);
        summary.ndcg[k] = ndcg_at_k(summary.results, k);
    }
    summary.auc = auc(summary.results);
    return summary;
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kFull: return "FULL";
        case Variant::kNoTadn: return "NO_TADN";
        case Variant::kNoShort: return "NO_SHORT";
        case Variant::kNeither: return "NEITHER";
        case Variant::kPureSoftmax: return "PURE_SOFTMAX";
        case Variant::kPureLinear: return "PURE_LINEAR";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::kFull, Variant::kNoTadn, Variant::kNoShort, Variant::kNeither,
                      Variant::kPureSoftmax, Variant::kPureLinear}) {
        if (name == variant_name(v)) return v;
    }
    HYT_THROW(ConfigError, "unknown variant '", name, "'");
}

ModelConfig build_variant(const ModelConfig& base, Variant variant) {
    ModelConfig cfg = base;
    switch (variant) {
        case Variant::kFull:
            break;
        case Variant::kNoTadn:
            cfg.long_linear_kind = LongLinearKind::kBaselineLinear;
            break;
        case Variant::kNoShort:
            cfg.use_short_branch = false;
            cfg.short_window = 0;
            break;
        case Variant::kNeither:
            cfg.long_linear_kind = LongLinearKind::kBaselineLinear;
            cfg.use_short_branch = false;
            cfg.short_window = 0;
            break;
        case Variant::kPureSoftmax:
            cfg.schedule_override = ScheduleOverride::kAllSoftmax;
            break;
        case Variant::kPureLinear:
            cfg.schedule_override = ScheduleOverride::kAllLinear;
            break;
    }
    return cfg;
}

namespace {

// A benchmark input of the requested context length, decomposed the same
// way real data is.
DecomposedSequence bench_sample(int64_t length, int64_t k, int64_t vocab, bool short_enabled,
                                Rng& rng) {
    DecomposedSequence s;
    const int64_t n_short = short_enabled ? std::min(k, length) : 0;
    const int64_t n_long = length - n_short;
    double t = 0.0;
    for (int64_t i = 0; i < n_long; ++i) {
        t += rng.uniform(0.1, 1.0);
        s.long_items.push_back(rng.uniform_int(vocab));
        s.long_times.push_back(t);
    }
    for (int64_t i = 0; i < n_short; ++i) {
        t += rng.uniform(0.1, 1.0);
        s.short_items.push_back(rng.uniform_int(vocab));
        s.short_times.push_back(t);
    }
    s.target_item = rng.uniform_int(vocab);
    s.target_time = t + 1.0;
    return s;
}

}  // namespace

BenchReport throughput_bench(const ModelConfig& base, const std::vector<Variant>& variants,
                             const std::vector<int64_t>& lengths, int64_t repeats,
                             uint64_t seed) {
    HYT_CHECK_CONFIG(!variants.empty() && !lengths.empty() && repeats >= 1,
                     "bench needs variants, lengths, repeats >= 1");

    // Matched-budget precondition: every variant within 5% of the first.
    std::vector<HyTRecModel> models;
    models.reserve(variants.size());
    for (Variant v : variants) {
        models.emplace_back(build_variant(base, v), /*init_seed=*/seed);
    }
    const double count0 = static_cast<double>(models.front().parameter_count());
    for (const HyTRecModel& m : models) {
        const double ratio = static_cast<double>(m.parameter_count()) / count0;
        HYT_CHECK(Error, ratio > 0.95 && ratio < 1.05,
                  "bench variants must share parameter scale within 5%; got ",
                  m.parameter_count(), " vs ", models.front().parameter_count());
    }

    BenchReport report;
    for (size_t vi = 0; vi < variants.size(); ++vi) {
        const HyTRecModel& model = models[vi];
        for (int64_t length : lengths) {
            BenchCell cell;
            cell.variant = variant_name(variants[vi]);
            cell.length = length;
            try {
                Rng rng(seed + static_cast<uint64_t>(length));
                DecomposedSequence s =
                    bench_sample(length, model.config().short_window, model.config().vocab_size,
                                 model.config().use_short_branch, rng);
                Tensor::reset_peak_bytes();
                // Warmup, then timed repeats.
                model.score_sample_value(s.long_items, s.long_times, s.short_items,
                                         s.target_time);
                std::vector<double> walls;
                for (int64_t r = 0; r < repeats; ++r) {
                    const auto t0 = std::chrono::steady_clock::now();
                    model.score_sample_value(s.long_items, s.long_times, s.short_items,
                                             s.target_time);
                    walls.push_back(std::chrono::duration<double>(
                                        std::chrono::steady_clock::now() - t0)
                                        .count());
                }
                std::sort(walls.begin(), walls.end());
                cell.wall_seconds = walls[walls.size() / 2];
                cell.tokens_per_second = static_cast<double>(length) / cell.wall_seconds;
                cell.total_tokens = length * (repeats + 1);
                cell.peak_memory_bytes = Tensor::peak_bytes();
            } catch (const std::bad_alloc&) {
                cell.oom = true;
            }
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

}  // namespace hytrec
