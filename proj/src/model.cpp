#include "hytrec/model.hpp"

#include <cmath>

#include "hytrec/rng.hpp"

namespace hytrec {

namespace A = ad;

void ModelConfig::validate() const {
    HYT_CHECK_CONFIG(vocab_size >= 1, "vocab_size must be >= 1, got ", vocab_size);
    HYT_CHECK_CONFIG(d_model >= 1, "d_model must be >= 1");
    HYT_CHECK_CONFIG(n_layers_long >= 1, "n_layers_long must be >= 1");
    HYT_CHECK_CONFIG(hybrid_ratio >= 1, "hybrid_ratio must be >= 1, got ", hybrid_ratio);
    HYT_CHECK_CONFIG(n_heads >= 1 && d_model % n_heads == 0, "d_model ", d_model,
                     " must be divisible by n_heads ", n_heads);
    if (use_short_branch) {
        HYT_CHECK_CONFIG(short_window >= 1, "short_window must be >= 1, got ", short_window);
        HYT_CHECK_CONFIG(n_layers_short >= 1, "n_layers_short must be >= 1");
    } else {
        HYT_CHECK_CONFIG(short_window == 0,
                         "short_window must be 0 when the short branch is disabled");
    }
    HYT_CHECK_CONFIG(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1], got ", alpha);
    HYT_CHECK_CONFIG(decay_period > 0.0, "decay_period must be positive");
    HYT_CHECK_CONFIG(max_seq_len >= 1, "max_seq_len must be >= 1");
}

int64_t LayerSchedule::softmax_count() const {
    int64_t n = 0;
    for (LayerKind k : kinds) n += k == LayerKind::kSoftmax ? 1 : 0;
    return n;
}

LayerSchedule build_layer_schedule(int64_t n_layers, int64_t ratio) {
    HYT_CHECK_CONFIG(n_layers >= 1, "schedule needs n_layers >= 1, got ", n_layers);
    HYT_CHECK_CONFIG(ratio >= 1, "schedule needs ratio >= 1, got ", ratio);
    LayerSchedule schedule;
    schedule.kinds.resize(static_cast<size_t>(n_layers));
    for (int64_t i = 0; i < n_layers; ++i) {
        const int64_t from_top = n_layers - 1 - i;
        schedule.kinds[static_cast<size_t>(i)] =
            from_top % (ratio + 1) == 0 ? LayerKind::kSoftmax : LayerKind::kLinear;
    }
    return schedule;
}

HyTRecModel::HyTRecModel(ModelConfig config, uint64_t init_seed, double init_scale)
    : config_(std::move(config)) {
    config_.validate();
    const int64_t d = config_.d_model;

    switch (config_.schedule_override) {
        case ScheduleOverride::kNone:
            schedule_ = build_layer_schedule(config_.n_layers_long, config_.hybrid_ratio);
            break;
        case ScheduleOverride::kAllSoftmax:
            schedule_.kinds.assign(static_cast<size_t>(config_.n_layers_long),
                                   LayerKind::kSoftmax);
            break;
        case ScheduleOverride::kAllLinear:
            schedule_.kinds.assign(static_cast<size_t>(config_.n_layers_long),
                                   LayerKind::kLinear);
            break;
    }

    item_embedding_ = add_param("item_embedding", {config_.vocab_size, d});
    for (size_t i = 0; i < schedule_.kinds.size(); ++i) {
        const std::string prefix = "long." + std::to_string(i);
        LongBlock block;
        block.kind = schedule_.kinds[i];
        if (block.kind == LayerKind::kSoftmax) {
            block.attn = make_attn_block(prefix + ".softmax", /*softmax_kind=*/true);
        } else if (config_.long_linear_kind == LongLinearKind::kTadn) {
            block.tadn = make_tadn_block(prefix + ".tadn");
        } else {
            block.attn = make_attn_block(prefix + ".linear", /*softmax_kind=*/false);
        }
        long_blocks_.push_back(std::move(block));
    }
    if (config_.use_short_branch) {
        pos_embedding_short_ = add_param("short.pos_embedding", {config_.short_window, d});
        for (int64_t i = 0; i < config_.n_layers_short; ++i) {
            short_blocks_.push_back(
                make_attn_block("short." + std::to_string(i), /*softmax_kind=*/true));
        }
        branch_gate_w_ = add_param("fuse.gate.weight", {2 * d, d});
        branch_gate_b_ = add_param("fuse.gate.bias", {d});
    }

    // Norm gains start at one, everything else uniform in [-s, s].
    const double s = init_scale > 0.0 ? init_scale : 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(init_seed);
    for (auto& p : store_) {
        const bool is_gain = p->name.size() >= 4 &&
                             p->name.compare(p->name.size() - 4, 4, "gain") == 0;
        for (double& x : p->value) x = is_gain ? 1.0 : rng.uniform(-s, s);
    }
}

Parameter* HyTRecModel::add_param(const std::string& name, std::vector<int64_t> shape) {
    store_.push_back(std::make_unique<Parameter>(name, Tensor(std::move(shape))));
    return store_.back().get();
}

FfnParams HyTRecModel::make_ffn(const std::string& prefix, int64_t expansion) {
    const int64_t d = config_.d_model;
    FfnParams f;
    f.norm_gain = add_param(prefix + ".norm.gain", {d});
    f.norm_shift = add_param(prefix + ".norm.shift", {d});
    f.w1 = add_param(prefix + ".w1", {d, expansion * d});
    f.b1 = add_param(prefix + ".b1", {expansion * d});
    f.w2 = add_param(prefix + ".w2", {expansion * d, d});
    f.b2 = add_param(prefix + ".b2", {d});
    return f;
}

std::unique_ptr<AttnBlockParams> HyTRecModel::make_attn_block(const std::string& prefix,
                                                              bool softmax_kind) {
    const int64_t d = config_.d_model;
    auto p = std::make_unique<AttnBlockParams>();
    p->softmax_kind = softmax_kind;
    p->norm_gain = add_param(prefix + ".norm.gain", {d});
    p->norm_shift = add_param(prefix + ".norm.shift", {d});
    p->wq = add_param(prefix + ".q_proj.weight", {d, d});
    p->bq = add_param(prefix + ".q_proj.bias", {d});
    p->wk = add_param(prefix + ".k_proj.weight", {d, d});
    p->bk = add_param(prefix + ".k_proj.bias", {d});
    p->wv = add_param(prefix + ".v_proj.weight", {d, d});
    p->bv = add_param(prefix + ".v_proj.bias", {d});
    p->wo = add_param(prefix + ".out_proj.weight", {d, d});
    p->bo = add_param(prefix + ".out_proj.bias", {d});
    // Wider FFN here than in the TADN block keeps the two block kinds at
    // matched parameter scale (8d^2 + O(d) each).
    p->ffn = make_ffn(prefix + ".ffn", /*expansion=*/2);
    return p;
}

std::unique_ptr<TadnBlockParams> HyTRecModel::make_tadn_block(const std::string& prefix) {
    const int64_t d = config_.d_model;
    auto p = std::make_unique<TadnBlockParams>();
    p->norm_gain = add_param(prefix + ".norm.gain", {d});
    p->norm_shift = add_param(prefix + ".norm.shift", {d});
    p->gate_w = add_param(prefix + ".gate_proj.weight", {2 * d, d});
    p->gate_b = add_param(prefix + ".gate_proj.bias", {d});
    p->gate_scalar_w = add_param(prefix + ".gate_scalar_proj.weight", {d, 1});
    p->gate_scalar_b = add_param(prefix + ".gate_scalar_proj.bias", {1});
    p->wq = add_param(prefix + ".q_proj.weight", {d, d});
    p->bq = add_param(prefix + ".q_proj.bias", {d});
    p->wk = add_param(prefix + ".k_proj.weight", {d, d});
    p->bk = add_param(prefix + ".k_proj.bias", {d});
    p->wv = add_param(prefix + ".v_proj.weight", {d, d});
    p->bv = add_param(prefix + ".v_proj.bias", {d});
    p->beta_w = add_param(prefix + ".beta_proj.weight", {d, 1});
    p->beta_b = add_param(prefix + ".beta_proj.bias", {1});
    p->out_w = add_param(prefix + ".out_proj.weight", {d, d});
    p->out_b = add_param(prefix + ".out_proj.bias", {d});
    p->ffn = make_ffn(prefix + ".ffn", /*expansion=*/1);
    return p;
}

std::vector<Parameter*> HyTRecModel::parameters() const {
    std::vector<Parameter*> out;
    out.reserve(store_.size());
    for (const auto& p : store_) out.push_back(p.get());
    return out;
}

Parameter* HyTRecModel::find_parameter(const std::string& name) const {
    for (const auto& p : store_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

int64_t HyTRecModel::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : store_) n += p->value.size();
    return n;
}

BoundParams HyTRecModel::bind(ad::Tape& tape) const {
    BoundParams bound;
    bound.reserve(store_.size());
    for (const auto& p : store_) bound.emplace(p.get(), tape.param(*p));
    return bound;
}

namespace {

ad::Var bound_var(const BoundParams& bound, const Parameter* p) {
    auto it = bound.find(p);
    HYT_CHECK(Error, it != bound.end(), "parameter ", p->name, " not bound on this tape");
    return it->second;
}

}  // namespace

ad::Var HyTRecModel::ffn_forward(ad::Tape&, const BoundParams& bound, const FfnParams& p,
                                 ad::Var x) const {
    A::Var xn = A::layer_norm(x, bound_var(bound, p.norm_gain), bound_var(bound, p.norm_shift));
    A::Var hidden = A::silu(A::affine(xn, bound_var(bound, p.w1), bound_var(bound, p.b1)));
    A::Var out = A::affine(hidden, bound_var(bound, p.w2), bound_var(bound, p.b2));
    return A::add(x, out);
}

ad::Var HyTRecModel::attn_block_forward(ad::Tape& tape, const BoundParams& bound,
                                        const AttnBlockParams& p, ad::Var x) const {
    const int64_t d = config_.d_model;
    const int64_t H = config_.n_heads, dh = d / H;
    A::Var xn = A::layer_norm(x, bound_var(bound, p.norm_gain), bound_var(bound, p.norm_shift));
    A::Var q = A::affine(xn, bound_var(bound, p.wq), bound_var(bound, p.bq));
    A::Var k = A::affine(xn, bound_var(bound, p.wk), bound_var(bound, p.bk));
    A::Var v = A::affine(xn, bound_var(bound, p.wv), bound_var(bound, p.bv));
    std::vector<A::Var> heads;
    heads.reserve(static_cast<size_t>(H));
    for (int64_t h = 0; h < H; ++h) {
        A::Var qh = A::slice_cols(q, h * dh, (h + 1) * dh);
        A::Var kh = A::slice_cols(k, h * dh, (h + 1) * dh);
        A::Var vh = A::slice_cols(v, h * dh, (h + 1) * dh);
        if (p.softmax_kind) {
            heads.push_back(A::softmax_attention_causal(qh, kh, vh));
        } else {
            heads.push_back(A::linear_attention_causal(A::elu1(qh), A::elu1(kh), vh));
        }
    }
    A::Var merged = H == 1 ? heads.front() : A::concat_cols(heads);
    A::Var out = A::affine(merged, bound_var(bound, p.wo), bound_var(bound, p.bo));
    A::Var with_attn = A::add(x, out);
    return ffn_forward(tape, bound, p.ffn, with_attn);
}

ad::Var HyTRecModel::tadn_block_forward(ad::Tape& tape, const BoundParams& bound,
                                        const TadnBlockParams& p, ad::Var x,
                                        const Tensor& tau) const {
    const int64_t d = config_.d_model;
    const int64_t H = config_.n_heads, dh = d / H;
    const double a = config_.alpha;

    A::Var xn = A::layer_norm(x, bound_var(bound, p.norm_gain), bound_var(bound, p.norm_shift));
    A::Var tau_v = tape.leaf(tau);

    // Gates: causal mean, deviation, static similarity gate, then the
    // temporal-dynamic combination for both the vector and scalar heads.
    A::Var hbar = A::causal_mean(xn);
    A::Var dev = A::sub(xn, hbar);
    A::Var g_static = A::sigmoid(
        A::affine_scalar(A::rowdot(xn, hbar), 1.0 / std::sqrt(static_cast<double>(d)), 0.0));
    A::Var dyn_vec = A::sigmoid(A::affine(A::concat_cols({xn, dev}), bound_var(bound, p.gate_w),
                                          bound_var(bound, p.gate_b)));
    A::Var g_vec = A::add(A::affine_scalar(A::colscale(dyn_vec, tau_v), a, 0.0),
                          A::affine_scalar(A::broadcast_col(g_static, d), 1.0 - a, 0.0));
    A::Var dyn_scalar = A::sigmoid(A::affine_vec(xn, bound_var(bound, p.gate_scalar_w),
                                                 bound_var(bound, p.gate_scalar_b)));
    A::Var g_scalar = A::add(A::affine_scalar(A::mul(dyn_scalar, tau_v), a, 0.0),
                             A::affine_scalar(g_static, 1.0 - a, 0.0));

    // Fusion, then the gated delta scan per head.
    A::Var fused = A::add(A::mul(g_vec, dev), A::mul(A::affine_scalar(g_vec, -1.0, 1.0), xn));
    A::Var q = A::affine(fused, bound_var(bound, p.wq), bound_var(bound, p.bq));
    A::Var k = A::affine(fused, bound_var(bound, p.wk), bound_var(bound, p.bk));
    A::Var v = A::affine(fused, bound_var(bound, p.wv), bound_var(bound, p.bv));
    A::Var beta = A::sigmoid(
        A::affine_vec(fused, bound_var(bound, p.beta_w), bound_var(bound, p.beta_b)));
    std::vector<A::Var> heads;
    heads.reserve(static_cast<size_t>(H));
    for (int64_t h = 0; h < H; ++h) {
        A::Var qh = A::slice_cols(q, h * dh, (h + 1) * dh);
        A::Var kh = A::l2norm_rows(A::slice_cols(k, h * dh, (h + 1) * dh));
        A::Var vh = A::slice_cols(v, h * dh, (h + 1) * dh);
        heads.push_back(A::tadn_scan(qh, kh, vh, beta, g_scalar));
    }
    A::Var merged = H == 1 ? heads.front() : A::concat_cols(heads);
    A::Var out = A::affine(merged, bound_var(bound, p.out_w), bound_var(bound, p.out_b));
    A::Var with_scan = A::add(x, out);
    return ffn_forward(tape, bound, p.ffn, with_scan);
}

ad::Var HyTRecModel::long_branch_forward(ad::Tape& tape, const BoundParams& bound,
                                         const std::vector<int64_t>& items,
                                         const std::vector<double>& times,
                                         double current_time) const {
    const int64_t d = config_.d_model;
    HYT_CHECK_DATA(items.size() == times.size(), "items/times length mismatch: ", items.size(),
                   " vs ", times.size());
    if (items.empty()) {
        return tape.leaf(Tensor({1, d}));
    }
    const int64_t L = static_cast<int64_t>(items.size());

    Tensor times_t({L});
    for (int64_t i = 0; i < L; ++i) times_t(i) = times[static_cast<size_t>(i)];
    Tensor tau;

    A::Var x = A::embedding_rows(bound_var(bound, item_embedding_), items);
    for (const LongBlock& block : long_blocks_) {
        if (block.tadn) {
            if (tau.empty()) {
                tau = compute_temporal_decay(times_t, current_time, config_.decay_period);
            }
            x = tadn_block_forward(tape, bound, *block.tadn, x, tau);
        } else {
            x = attn_block_forward(tape, bound, *block.attn, x);
        }
    }
    return A::slice_rows(x, L - 1, L);
}

ad::Var HyTRecModel::short_branch_forward(ad::Tape& tape, const BoundParams& bound,
                                          const std::vector<int64_t>& items) const {
    HYT_CHECK_CONFIG(config_.use_short_branch, "short branch is disabled in this config");
    HYT_CHECK_DATA(!items.empty(), "short branch needs at least one item");
    HYT_CHECK_DATA(static_cast<int64_t>(items.size()) <= config_.short_window,
                   "short branch got ", items.size(), " items, window is ",
                   config_.short_window);
    const int64_t L = static_cast<int64_t>(items.size());

    A::Var emb = A::embedding_rows(bound_var(bound, item_embedding_), items);
    A::Var pos = A::slice_rows(bound_var(bound, pos_embedding_short_), 0, L);
    A::Var x = A::add(emb, pos);
    for (const auto& block : short_blocks_) {
        x = attn_block_forward(tape, bound, *block, x);
    }
    return A::slice_rows(x, L - 1, L);
}

ad::Var HyTRecModel::fuse_branches(ad::Tape&, const BoundParams& bound, ad::Var long_repr,
                                   ad::Var short_repr) const {
    A::Var cat = A::concat_cols({long_repr, short_repr});
    A::Var gate = A::sigmoid(
        A::affine(cat, bound_var(bound, branch_gate_w_), bound_var(bound, branch_gate_b_)));
    A::Var keep_short = A::mul(gate, short_repr);
    A::Var keep_long = A::mul(A::affine_scalar(gate, -1.0, 1.0), long_repr);
    return A::add(keep_short, keep_long);
}

ad::Var HyTRecModel::predict_scores(ad::Tape&, const BoundParams& bound, ad::Var fused) const {
    return A::matmul_nt(fused, bound_var(bound, item_embedding_));
}

ad::Var HyTRecModel::score_sample(ad::Tape& tape, const BoundParams& bound,
                                  const std::vector<int64_t>& long_items,
                                  const std::vector<double>& long_times,
                                  const std::vector<int64_t>& short_items,
                                  double current_time) const {
    A::Var long_repr = long_branch_forward(tape, bound, long_items, long_times, current_time);
    A::Var fused = long_repr;
    if (config_.use_short_branch) {
        A::Var short_repr = short_branch_forward(tape, bound, short_items);
        fused = fuse_branches(tape, bound, long_repr, short_repr);
    } else {
        HYT_CHECK_DATA(short_items.empty(),
                       "short items supplied but the short branch is disabled");
    }
    return predict_scores(tape, bound, fused);
}

Tensor HyTRecModel::score_sample_value(const std::vector<int64_t>& long_items,
                                       const std::vector<double>& long_times,
                                       const std::vector<int64_t>& short_items,
                                       double current_time) const {
    ad::Tape tape(/*recording=*/false);
    BoundParams bound = bind(tape);
    A::Var scores = score_sample(tape, bound, long_items, long_times, short_items, current_time);
    return scores.value();
}

}  // namespace hytrec
