#include "hytrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <unordered_map>

namespace hytrec {

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(delimiter, start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

int64_t parse_int_field(const std::string& field, int64_t line_no, const char* what) {
    int64_t value = 0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    HYT_CHECK_DATA(ec == std::errc() && ptr == end, "line ", line_no, ": unparseable ", what,
                   " '", field, "'");
    return value;
}

}  // namespace

ParsedLog parse_interaction_log(const std::string& path, const LogFormat& format) {
    std::ifstream in(path);
    HYT_CHECK_DATA(in.good(), "cannot open interaction log '", path, "'");

    int max_col = std::max({format.user_col, format.item_col, format.time_col,
                            format.rating_col});
    HYT_CHECK_CONFIG(format.user_col >= 0 && format.item_col >= 0 && format.time_col >= 0,
                     "log format columns must be non-negative");

    ParsedLog parsed;
    std::unordered_map<std::string, int64_t> item_ids;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields = split_line(line, format.delimiter);
        HYT_CHECK_DATA(static_cast<int>(fields.size()) > max_col, "line ", line_no,
                       ": expected at least ", max_col + 1, " fields, got ", fields.size());
        const std::string& user = fields[static_cast<size_t>(format.user_col)];
        const std::string& item = fields[static_cast<size_t>(format.item_col)];
        HYT_CHECK_DATA(!user.empty() && !item.empty(), "line ", line_no,
                       ": empty user or item field");
        const int64_t timestamp =
            parse_int_field(fields[static_cast<size_t>(format.time_col)], line_no, "timestamp");
        HYT_CHECK_DATA(timestamp >= 0, "line ", line_no, ": negative timestamp ", timestamp);

        auto [it, inserted] = item_ids.emplace(item, static_cast<int64_t>(parsed.item_tokens.size()));
        if (inserted) parsed.item_tokens.push_back(item);
        parsed.events.push_back(InteractionEvent{user, it->second, timestamp});
    }
    return parsed;
}

std::vector<UserSequence> build_user_sequences(const std::vector<InteractionEvent>& events) {
    std::vector<UserSequence> sequences;
    std::unordered_map<std::string, size_t> index;
    for (const InteractionEvent& e : events) {
        auto [it, inserted] = index.emplace(e.user_id, sequences.size());
        if (inserted) sequences.push_back(UserSequence{e.user_id, {}});
        sequences[it->second].events.push_back(SequenceEvent{e.item_id, e.timestamp});
    }
    for (UserSequence& seq : sequences) {
        std::stable_sort(seq.events.begin(), seq.events.end(),
                         [](const SequenceEvent& a, const SequenceEvent& b) {
                             return a.timestamp < b.timestamp;
                         });
    }
    return sequences;
}

std::vector<UserSequence> filter_sequences(std::vector<UserSequence> sequences,
                                           int64_t min_user_events, int64_t min_item_count) {
    HYT_CHECK_CONFIG(min_user_events >= 1 && min_item_count >= 1,
                     "filter thresholds must be >= 1");
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<int64_t, int64_t> item_count;
        for (const UserSequence& seq : sequences) {
            for (const SequenceEvent& e : seq.events) ++item_count[e.item_id];
        }
        std::vector<UserSequence> next;
        next.reserve(sequences.size());
        for (UserSequence& seq : sequences) {
            std::vector<SequenceEvent> kept;
            kept.reserve(seq.events.size());
            for (const SequenceEvent& e : seq.events) {
                if (item_count[e.item_id] >= min_item_count) {
                    kept.push_back(e);
                } else {
                    changed = true;
                }
            }
            if (static_cast<int64_t>(kept.size()) >= min_user_events) {
                next.push_back(UserSequence{seq.user_id, std::move(kept)});
            } else if (!kept.empty() || !seq.events.empty()) {
                changed = true;
            }
        }
        sequences = std::move(next);
    }
    HYT_CHECK_DATA(!sequences.empty(),
                   "filtering removed every sequence; lower min_user_events/min_item_count");
    return sequences;
}

std::vector<std::string> compact_vocabulary(std::vector<UserSequence>& sequences,
                                            const std::vector<std::string>& item_tokens) {
    std::vector<int64_t> remap(item_tokens.size(), -1);
    for (const UserSequence& seq : sequences) {
        for (const SequenceEvent& e : seq.events) {
            HYT_CHECK_DATA(e.item_id >= 0 && e.item_id < static_cast<int64_t>(remap.size()),
                           "item id ", e.item_id, " outside token table");
            remap[static_cast<size_t>(e.item_id)] = 0;
        }
    }
    std::vector<std::string> surviving;
    for (size_t id = 0; id < remap.size(); ++id) {
        if (remap[id] == 0) {
            remap[id] = static_cast<int64_t>(surviving.size());
            surviving.push_back(item_tokens[id]);
        }
    }
    for (UserSequence& seq : sequences) {
        for (SequenceEvent& e : seq.events) e.item_id = remap[static_cast<size_t>(e.item_id)];
    }
    return surviving;
}

DecomposedSequence decompose(const UserSequence& seq, int64_t k) {
    HYT_CHECK_DATA(k >= 0, "short window must be >= 0");
    const int64_t n = static_cast<int64_t>(seq.events.size());
    HYT_CHECK_DATA(n >= 2, "sequence for user '", seq.user_id,
                   "' too short to decompose: need >= 2 events, got ", n);
    DecomposedSequence out;
    out.user_id = seq.user_id;
    out.target_item = seq.events.back().item_id;
    out.target_time = static_cast<double>(seq.events.back().timestamp);
    const int64_t n_context = n - 1;
    const int64_t n_short = std::min(k, n_context);
    const int64_t n_long = n_context - n_short;
    for (int64_t i = 0; i < n_long; ++i) {
        out.long_items.push_back(seq.events[static_cast<size_t>(i)].item_id);
        out.long_times.push_back(static_cast<double>(seq.events[static_cast<size_t>(i)].timestamp));
    }
    for (int64_t i = n_long; i < n_context; ++i) {
        out.short_items.push_back(seq.events[static_cast<size_t>(i)].item_id);
        out.short_times.push_back(
            static_cast<double>(seq.events[static_cast<size_t>(i)].timestamp));
    }
    return out;
}

DatasetSplit make_split(const std::vector<UserSequence>& sequences, int64_t k) {
    DatasetSplit split;
    for (const UserSequence& seq : sequences) {
        const int64_t n = static_cast<int64_t>(seq.events.size());
        if (n >= 2) split.test.push_back(decompose(seq, k));
        if (n >= 3) {
            UserSequence prefix{seq.user_id,
                                {seq.events.begin(), seq.events.end() - 1}};
            split.valid.push_back(decompose(prefix, k));
        }
        if (n >= 4) {
            UserSequence prefix{seq.user_id,
                                {seq.events.begin(), seq.events.end() - 2}};
            split.train.push_back(decompose(prefix, k));
        }
    }
    return split;
}

std::vector<UserSequence> generate_synthetic_drift(const SyntheticConfig& config) {
    HYT_CHECK_CONFIG(config.n_users >= 1 && config.n_items >= 2 && config.seq_len >= 2,
                     "synthetic generator needs n_users >= 1, n_items >= 2, seq_len >= 2");
    HYT_CHECK_CONFIG(config.drift_strength >= 0.0 && config.drift_strength <= 1.0,
                     "drift_strength must be in [0,1], got ", config.drift_strength);
    HYT_CHECK_CONFIG(config.drift_point_fraction > 0.0 && config.drift_point_fraction < 1.0,
                     "drift_point_fraction must be in (0,1)");
    HYT_CHECK_CONFIG(config.n_clusters >= 2 && config.n_clusters <= config.n_items,
                     "need 2 <= n_clusters <= n_items");
    HYT_CHECK_CONFIG(config.base_gap > 0.0 && config.burst_gap > 0.0, "gaps must be positive");

    Rng rng(config.seed);
    const int64_t cluster_size = config.n_items / config.n_clusters;
    auto sample_cluster_item = [&](int64_t cluster) {
        const int64_t lo = cluster * cluster_size;
        const int64_t hi =
            cluster == config.n_clusters - 1 ? config.n_items : (cluster + 1) * cluster_size;
        return lo + rng.uniform_int(hi - lo);
    };

    const int64_t drift_at =
        std::max<int64_t>(1, static_cast<int64_t>(static_cast<double>(config.seq_len) *
                                                  config.drift_point_fraction));
    std::vector<UserSequence> sequences;
    sequences.reserve(static_cast<size_t>(config.n_users));
    for (int64_t u = 0; u < config.n_users; ++u) {
        const int64_t long_cluster = rng.uniform_int(config.n_clusters);
        const int64_t drift_cluster =
            (long_cluster + 1 + rng.uniform_int(config.n_clusters - 1)) % config.n_clusters;
        UserSequence seq;
        seq.user_id = "u" + std::to_string(u);
        seq.events.reserve(static_cast<size_t>(config.seq_len));
        double t = 0.0;
        for (int64_t i = 0; i < config.seq_len; ++i) {
            const bool post_drift = i >= drift_at;
            const double gap = post_drift ? config.burst_gap : config.base_gap;
            t += rng.uniform(0.5, 1.5) * gap;
            int64_t cluster = long_cluster;
            if (post_drift && rng.uniform() < config.drift_strength) cluster = drift_cluster;
            seq.events.push_back(
                SequenceEvent{sample_cluster_item(cluster), static_cast<int64_t>(t * 1000.0)});
        }
        sequences.push_back(std::move(seq));
    }
    return sequences;
}

DecomposedSequence Batch::row(int64_t r) const {
    HYT_CHECK_DATA(r >= 0 && r < n_rows, "batch row ", r, " out of range");
    DecomposedSequence out;
    const int64_t ll = long_len[static_cast<size_t>(r)];
    const int64_t sl = short_len[static_cast<size_t>(r)];
    for (int64_t i = 0; i < ll; ++i) {
        out.long_items.push_back(long_items[static_cast<size_t>(r * long_width + i)]);
        out.long_times.push_back(long_times[static_cast<size_t>(r * long_width + i)]);
    }
    for (int64_t i = 0; i < sl; ++i) {
        out.short_items.push_back(short_items[static_cast<size_t>(r * short_width + i)]);
        out.short_times.push_back(short_times[static_cast<size_t>(r * short_width + i)]);
    }
    out.target_item = target[static_cast<size_t>(r)];
    out.target_time = target_time[static_cast<size_t>(r)];
    return out;
}

std::vector<Batch> make_batches(const std::vector<DecomposedSequence>& samples,
                                int64_t batch_size, int64_t max_len, Rng& rng) {
    HYT_CHECK_CONFIG(batch_size >= 1 && max_len >= 1, "batch_size and max_len must be >= 1");
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        const size_t stop = std::min(order.size(), start + static_cast<size_t>(batch_size));
        Batch batch;
        batch.n_rows = static_cast<int64_t>(stop - start);

        // Left-truncation first: keep the most recent max_len context
        // events, dropping from the long part before the short part.
        std::vector<DecomposedSequence> rows;
        rows.reserve(static_cast<size_t>(batch.n_rows));
        for (size_t i = start; i < stop; ++i) {
            DecomposedSequence s = samples[order[i]];
            int64_t total = static_cast<int64_t>(s.long_items.size() + s.short_items.size());
            if (total > max_len) {
                int64_t drop = total - max_len;
                const int64_t drop_long =
                    std::min<int64_t>(drop, static_cast<int64_t>(s.long_items.size()));
                s.long_items.erase(s.long_items.begin(), s.long_items.begin() + drop_long);
                s.long_times.erase(s.long_times.begin(), s.long_times.begin() + drop_long);
                drop -= drop_long;
                if (drop > 0) {
                    s.short_items.erase(s.short_items.begin(), s.short_items.begin() + drop);
                    s.short_times.erase(s.short_times.begin(), s.short_times.begin() + drop);
                }
            }
            batch.long_width = std::max(batch.long_width,
                                        static_cast<int64_t>(s.long_items.size()));
            batch.short_width = std::max(batch.short_width,
                                         static_cast<int64_t>(s.short_items.size()));
            rows.push_back(std::move(s));
        }

        batch.long_items.assign(static_cast<size_t>(batch.n_rows * batch.long_width), 0);
        batch.long_times.assign(static_cast<size_t>(batch.n_rows * batch.long_width), 0.0);
        batch.short_items.assign(static_cast<size_t>(batch.n_rows * batch.short_width), 0);
        batch.short_times.assign(static_cast<size_t>(batch.n_rows * batch.short_width), 0.0);
        for (int64_t r = 0; r < batch.n_rows; ++r) {
            const DecomposedSequence& s = rows[static_cast<size_t>(r)];
            batch.long_len.push_back(static_cast<int64_t>(s.long_items.size()));
            batch.short_len.push_back(static_cast<int64_t>(s.short_items.size()));
            for (size_t i = 0; i < s.long_items.size(); ++i) {
                batch.long_items[static_cast<size_t>(r * batch.long_width) + i] = s.long_items[i];
                batch.long_times[static_cast<size_t>(r * batch.long_width) + i] = s.long_times[i];
            }
            for (size_t i = 0; i < s.short_items.size(); ++i) {
                batch.short_items[static_cast<size_t>(r * batch.short_width) + i] =
                    s.short_items[i];
                batch.short_times[static_cast<size_t>(r * batch.short_width) + i] =
                    s.short_times[i];
            }
            batch.target.push_back(s.target_item);
            batch.target_time.push_back(s.target_time);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

void write_event_log(const std::string& path, const std::vector<UserSequence>& sequences,
                     const std::vector<std::string>& item_tokens) {
    std::ofstream out(path);
    HYT_CHECK_DATA(out.good(), "cannot write event log '", path, "'");
    for (const UserSequence& seq : sequences) {
        for (const SequenceEvent& e : seq.events) {
            HYT_CHECK_DATA(e.item_id >= 0 &&
                               e.item_id < static_cast<int64_t>(item_tokens.size()),
                           "item id ", e.item_id, " outside token table");
            out << seq.user_id << '\t' << item_tokens[static_cast<size_t>(e.item_id)] << '\t'
                << e.timestamp << '\n';
        }
    }
    HYT_CHECK_DATA(out.good(), "failed writing event log '", path, "'");
}

void write_vocabulary(const std::string& path, const std::vector<std::string>& item_tokens) {
    std::ofstream out(path);
    HYT_CHECK_DATA(out.good(), "cannot write vocabulary '", path, "'");
    for (size_t id = 0; id < item_tokens.size(); ++id) {
        out << item_tokens[id] << '\t' << id << '\n';
    }
    HYT_CHECK_DATA(out.good(), "failed writing vocabulary '", path, "'");
}

}  // namespace hytrec
