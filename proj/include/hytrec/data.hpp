#pragma once

#include <string>
#include <vector>

#include "hytrec/rng.hpp"
#include "hytrec/tensor.hpp"

namespace hytrec {

struct InteractionEvent {
    std::string user_id;
    int64_t item_id = 0;    // dense index after vocabulary mapping
    int64_t timestamp = 0;  // seconds, or abstract steps for synthetic data
};

struct SequenceEvent {
    int64_t item_id = 0;
    int64_t timestamp = 0;
};

// Per-user, time-ordered; equal timestamps keep input order.
struct UserSequence {
    std::string user_id;
    std::vector<SequenceEvent> events;
};

// Column layout of a delimiter-separated interaction log. rating_col < 0
// means the file has no rating column; ratings are ignored either way.
struct LogFormat {
    char delimiter = '\t';
    int user_col = 0;
    int item_col = 1;
    int rating_col = -1;
    int time_col = 2;
};

struct ParsedLog {
    std::vector<InteractionEvent> events;
    std::vector<std::string> item_tokens;  // dense id -> original token
};

// Parses the log, remapping item tokens to dense 0-based ids in first-seen
// order. Malformed lines abort with the line number; silent skips are a
// bug, not a feature.
ParsedLog parse_interaction_log(const std::string& path, const LogFormat& format);

// Groups events per user (first-seen user order) and sorts stably by
// timestamp.
std::vector<UserSequence> build_user_sequences(const std::vector<InteractionEvent>& events);

// Iterative k-core-style filtering: drop items seen fewer than
// min_item_count times and users with fewer than min_user_events events,
// until nothing changes. Errors when nothing survives.
std::vector<UserSequence> filter_sequences(std::vector<UserSequence> sequences,
                                           int64_t min_user_events, int64_t min_item_count);

// Compacts item ids to a dense range over the items that survive in
// `sequences`, preserving relative id order; rewrites the sequences and
// returns the surviving tokens.
std::vector<std::string> compact_vocabulary(std::vector<UserSequence>& sequences,
                                            const std::vector<std::string>& item_tokens);

// One prediction sample: context split into the long history and the
// recent window, plus the held-out target.
struct DecomposedSequence {
    std::string user_id;
    std::vector<int64_t> long_items;
    std::vector<double> long_times;
    std::vector<int64_t> short_items;
    std::vector<double> short_times;
    int64_t target_item = 0;
    double target_time = 0;  // the prediction-point timestamp
};

// Splits off the last event as target and divides the remaining context:
// the most recent min(K, n_context) events form the short part. K == 0
// routes everything into the long part.
DecomposedSequence decompose(const UserSequence& seq, int64_t k);

struct DatasetSplit {
    std::vector<DecomposedSequence> train;
    std::vector<DecomposedSequence> valid;
    std::vector<DecomposedSequence> test;
};

// Leave-one-out: last event is the test target, second-to-last the
// validation target, third-to-last the train target. Users contribute to
// each split their length allows.
DatasetSplit make_split(const std::vector<UserSequence>& sequences, int64_t k);

struct SyntheticConfig {
    int64_t n_users = 2000;
    int64_t n_items = 500;
    int64_t seq_len = 100;
    double drift_point_fraction = 0.7;
    double drift_strength = 0.8;  // probability post-drift items come from the drift cluster
    int64_t n_clusters = 10;
    uint64_t seed = 1;
    double base_gap = 10.0;   // mean spacing before the drift point
    double burst_gap = 0.2;   // mean spacing after it, so tau separates the regimes
};

// Interest-drift generator: every user has a long-term cluster, switches
// to a mixture after the drift point, and the timestamps burst so that
// temporal decay can tell the regimes apart. Deterministic per seed.
std::vector<UserSequence> generate_synthetic_drift(const SyntheticConfig& config);

// Rectangular padded batch; padded cells are zeros and excluded from the
// model by the per-row lengths.
struct Batch {
    int64_t n_rows = 0;
    int64_t long_width = 0;
    int64_t short_width = 0;
    std::vector<int64_t> long_items, short_items;  // row-major [n_rows x width]
    std::vector<double> long_times, short_times;
    std::vector<int64_t> long_len, short_len;
    std::vector<int64_t> target;
    std::vector<double> target_time;

    // Unpadded view of one row.
    DecomposedSequence row(int64_t r) const;
};

// Shuffles the samples with the given rng, then packs fixed-size padded
// batches. Contexts longer than max_len lose their oldest events first.
std::vector<Batch> make_batches(const std::vector<DecomposedSequence>& samples,
                                int64_t batch_size, int64_t max_len, Rng& rng);

// Serialization of event logs in the same format parse reads.
void write_event_log(const std::string& path, const std::vector<UserSequence>& sequences,
                     const std::vector<std::string>& item_tokens);
void write_vocabulary(const std::string& path, const std::vector<std::string>& item_tokens);

}  // namespace hytrec
