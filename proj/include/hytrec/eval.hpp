#pragma once

#include <map>
#include <string>
#include <vector>

#include "hytrec/data.hpp"
#include "hytrec/model.hpp"

namespace hytrec {

// Outcome of ranking the target within the full score vector. Ties are
// broken by item-id order for the rank; AUC counts them at half weight.
struct RankingResult {
    int64_t target = 0;
    int64_t rank = 0;     // 1-based
    int64_t n_items = 0;
    int64_t n_above = 0;  // items scored strictly above the target
    int64_t n_tied = 0;   // non-target items sharing the target's score
};

RankingResult rank_prediction(const Tensor& scores, int64_t target);

double hit_rate_at_k(const std::vector<RankingResult>& results, int64_t k);
double ndcg_at_k(const std::vector<RankingResult>& results, int64_t k);
double auc(const std::vector<RankingResult>& results);

struct EvalSummary {
    std::map<int64_t, double> hr;
    std::map<int64_t, double> ndcg;
    double auc = 0.0;
    double mean_latency_seconds = 0.0;
    int64_t n_predictions = 0;
    std::vector<RankingResult> results;
};

EvalSummary evaluate_model(const HyTRecModel& model,
                           const std::vector<DecomposedSequence>& samples,
                           const std::vector<int64_t>& k_list);

// Ablation and benchmark variants. FULL is the untouched config; NO_TADN
// swaps TADN layers for plain kernelized attention; NO_SHORT folds the
// recent window into the long branch; NEITHER does both; the PURE_*
// variants force a uniform long-stack schedule for the benchmark.
enum class Variant { kFull, kNoTadn, kNoShort, kNeither, kPureSoftmax, kPureLinear };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
ModelConfig build_variant(const ModelConfig& base, Variant variant);

struct BenchCell {
    std::string variant;
    int64_t length = 0;
    double tokens_per_second = 0.0;
    double wall_seconds = 0.0;       // median over repeats
    int64_t total_tokens = 0;        // length * repeats actually processed
    int64_t peak_memory_bytes = 0;
    bool oom = false;
};

struct BenchReport {
    std::vector<BenchCell> cells;
};

// Forward-pass throughput per (variant, length): median of `repeats`
// timed runs after one warmup, single-threaded. Requires all variants to
// sit within 5% of each other's parameter count. Out-of-memory on a cell
// is recorded, not fatal.
BenchReport throughput_bench(const ModelConfig& base, const std::vector<Variant>& variants,
                             const std::vector<int64_t>& lengths, int64_t repeats,
                             uint64_t seed);

}  // namespace hytrec
