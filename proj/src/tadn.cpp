#include "hytrec/tadn.hpp"

#include <algorithm>
#include <cmath>

namespace hytrec {

namespace {

constexpr double kKeyNormFloor = 1e-12;

void l2_normalize_rows_per_head(Tensor& k, int64_t n_heads) {
    const int64_t L = k.rows(), d = k.cols();
    const int64_t dh = d / n_heads;
    for (int64_t t = 0; t < L; ++t) {
        double* row = k.data() + t * d;
        for (int64_t h = 0; h < n_heads; ++h) {
            double* head = row + h * dh;
            double norm2 = 0.0;
            for (int64_t j = 0; j < dh; ++j) norm2 += head[j] * head[j];
            const double norm = std::max(std::sqrt(norm2), kKeyNormFloor);
            for (int64_t j = 0; j < dh; ++j) head[j] /= norm;
        }
    }
}

}  // namespace

void TadnLayerParams::validate() const {
    const int64_t d = width();
    HYT_CHECK_SHAPE(gate_proj.in_dim() == 2 * d && gate_proj.out_dim() == d,
                    "gate_proj must be [2d x d]");
    HYT_CHECK_SHAPE(gate_scalar_proj.in_dim() == d && gate_scalar_proj.out_dim() == 1,
                    "gate_scalar_proj must be [d x 1]");
    HYT_CHECK_SHAPE(k_proj.in_dim() == d && k_proj.out_dim() == d, "k_proj must be [d x d]");
    HYT_CHECK_SHAPE(v_proj.in_dim() == d && v_proj.out_dim() == d, "v_proj must be [d x d]");
    HYT_CHECK_SHAPE(beta_proj.in_dim() == d && beta_proj.out_dim() == 1,
                    "beta_proj must be [d x 1]");
    HYT_CHECK_SHAPE(out_proj.in_dim() == d && out_proj.out_dim() == d, "out_proj must be [d x d]");
    HYT_CHECK_SHAPE(norm_gain.ndim() == 1 && norm_gain.dim(0) == d &&
                        norm_shift.ndim() == 1 && norm_shift.dim(0) == d,
                    "norm affine must be [d]");
    HYT_CHECK(Error, alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1], got ", alpha);
    HYT_CHECK(Error, decay_period > 0.0, "decay_period must be positive, got ", decay_period);
    HYT_CHECK(Error, n_heads >= 1 && d % n_heads == 0, "width ", d,
              " must be divisible by n_heads ", n_heads);
}

Tensor compute_temporal_decay(const Tensor& event_times, double current_time, double T) {
    HYT_CHECK(Error, T > 0.0, "decay period must be positive, got ", T);
    HYT_CHECK_SHAPE(event_times.ndim() == 1, "event_times must be 1-d");
    Tensor tau({event_times.dim(0)});
    for (int64_t t = 0; t < event_times.dim(0); ++t) {
        const double elapsed = current_time - event_times(t);
        HYT_CHECK(Error, elapsed >= 0.0, "event time ", event_times(t),
                  " is after current time ", current_time);
        tau(t) = std::exp(-elapsed / T);
    }
    return tau;
}

GateComponents compute_gates(const Tensor& h, const Tensor& tau, const TadnLayerParams& params) {
    const int64_t L = h.rows(), d = h.cols();
    HYT_CHECK_SHAPE(d == params.width(), "feature width ", d, " != layer width ", params.width());
    HYT_CHECK_SHAPE(tau.ndim() == 1 && tau.dim(0) == L, "tau must be [L]");

    GateComponents g;
    g.tau = tau;

    // Causal running mean; the full-sequence mean would leak future rows.
    g.h_bar = Tensor({L, d});
    {
        std::vector<double> acc(static_cast<size_t>(d), 0.0);
        for (int64_t t = 0; t < L; ++t) {
            const double* row = h.data() + t * d;
            double* bar = g.h_bar.data() + t * d;
            for (int64_t j = 0; j < d; ++j) {
                acc[static_cast<size_t>(j)] += row[j];
                bar[j] = acc[static_cast<size_t>(j)] / static_cast<double>(t + 1);
            }
        }
    }

    g.delta_h = Tensor({L, d});
    for (int64_t i = 0; i < L * d; ++i) g.delta_h(i) = h(i) - g.h_bar(i);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    g.g_static = Tensor({L});
    for (int64_t t = 0; t < L; ++t) {
        const double* row = h.data() + t * d;
        const double* bar = g.h_bar.data() + t * d;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) dot += row[j] * bar[j];
        g.g_static(t) = sigmoid(dot * inv_sqrt_d);
    }

    // Dynamic vector gate from concat(h, delta_h).
    Tensor gate_in({L, 2 * d});
    for (int64_t t = 0; t < L; ++t) {
        double* row = gate_in.data() + t * 2 * d;
        const double* h_row = h.data() + t * d;
        const double* dh_row = g.delta_h.data() + t * d;
        for (int64_t j = 0; j < d; ++j) {
            row[j] = h_row[j];
            row[d + j] = dh_row[j];
        }
    }
    Tensor dyn = apply_linear(params.gate_proj, gate_in);
    g.g_vec = Tensor({L, d});
    const double a = params.alpha;
    for (int64_t t = 0; t < L; ++t) {
        const double stat = (1.0 - a) * g.g_static(t);
        const double decay = g.tau(t);
        double* gv = g.g_vec.data() + t * d;
        const double* dyn_row = dyn.data() + t * d;
        for (int64_t j = 0; j < d; ++j) {
            gv[j] = a * sigmoid(dyn_row[j]) * decay + stat;
        }
    }

    Tensor dyn_scalar = apply_linear(params.gate_scalar_proj, h);
    g.g_scalar = Tensor({L});
    for (int64_t t = 0; t < L; ++t) {
        g.g_scalar(t) = a * sigmoid(dyn_scalar(t, 0)) * g.tau(t) + (1.0 - a) * g.g_static(t);
    }

    g.g_vec.ensure_finite("compute_gates g_vec");
    g.g_scalar.ensure_finite("compute_gates g_scalar");
    return g;
}

Tensor fuse_features(const Tensor& h, const GateComponents& gates) {
    HYT_CHECK_SHAPE(h.same_shape(gates.g_vec) && h.same_shape(gates.delta_h),
                    "fuse_features shape mismatch");
    Tensor out(h.shape());
    for (int64_t i = 0; i < h.size(); ++i) {
        const double g = gates.g_vec(i);
        out(i) = g * gates.delta_h(i) + (1.0 - g) * h(i);
    }
    return out;
}

namespace detail {

ScanInputs project_scan_inputs(const Tensor& h_fused, const GateComponents& gates,
                               const TadnLayerParams& params) {
    params.validate();
    const int64_t L = h_fused.rows();
    HYT_CHECK_SHAPE(h_fused.cols() == params.width(), "scan input width mismatch");
    HYT_CHECK_SHAPE(gates.g_scalar.ndim() == 1 && gates.g_scalar.dim(0) == L,
                    "g_scalar must be [L]");

    ScanInputs in;
    in.q = apply_linear(params.q_proj, h_fused);
    in.k = apply_linear(params.k_proj, h_fused);
    in.v = apply_linear(params.v_proj, h_fused);
    l2_normalize_rows_per_head(in.k, params.n_heads);

    Tensor beta_raw = apply_linear(params.beta_proj, h_fused);
    in.beta = Tensor({L});
    in.erase = Tensor({L});
    for (int64_t t = 0; t < L; ++t) {
        in.beta(t) = sigmoid(beta_raw(t, 0));
        in.erase(t) = gates.g_scalar(t) * in.beta(t);
    }
    return in;
}

}  // namespace detail

Tensor tadn_scan(const Tensor& h_fused, const GateComponents& gates,
                 const TadnLayerParams& params, std::vector<TadnState>* states_out) {
    const detail::ScanInputs in = detail::project_scan_inputs(h_fused, gates, params);
    const int64_t L = h_fused.rows(), d = h_fused.cols();
    const int64_t H = params.n_heads, dh = d / H;

    Tensor out({L, d});
    std::vector<double> sk(static_cast<size_t>(dh));
    if (states_out) states_out->assign(static_cast<size_t>(H * L), TadnState{});

    for (int64_t h = 0; h < H; ++h) {
        Tensor state({dh, dh});  // rows index value dims, cols key dims
        for (int64_t t = 0; t < L; ++t) {
            const double* k_row = in.k.data() + t * d + h * dh;
            const double* v_row = in.v.data() + t * d + h * dh;
            const double* q_row = in.q.data() + t * d + h * dh;
            const double beta = in.beta(t);
            const double erase = in.erase(t);

            // S (I - c k k') = S - c (S k) k'
            for (int64_t a = 0; a < dh; ++a) {
                const double* s_row = state.data() + a * dh;
                double acc = 0.0;
                for (int64_t b = 0; b < dh; ++b) acc += s_row[b] * k_row[b];
                sk[static_cast<size_t>(a)] = acc;
            }
            for (int64_t a = 0; a < dh; ++a) {
                double* s_row = state.data() + a * dh;
                const double coeff = erase * sk[static_cast<size_t>(a)];
                const double write = beta * v_row[a];
                for (int64_t b = 0; b < dh; ++b) {
                    s_row[b] += (write - coeff) * k_row[b];
                }
            }

            double* out_row = out.data() + t * d + h * dh;
            for (int64_t a = 0; a < dh; ++a) {
                const double* s_row = state.data() + a * dh;
                double acc = 0.0;
                for (int64_t b = 0; b < dh; ++b) acc += s_row[b] * q_row[b];
                out_row[a] = acc;
            }
            if (states_out) (*states_out)[static_cast<size_t>(h * L + t)].s = state;
        }
    }
    out.ensure_finite("tadn_scan");
    return out;
}

Tensor tadn_closed_form(const Tensor& h_fused, const GateComponents& gates,
                        const TadnLayerParams& params) {
    const detail::ScanInputs in = detail::project_scan_inputs(h_fused, gates, params);
    const int64_t L = h_fused.rows(), d = h_fused.cols();
    const int64_t H = params.n_heads, dh = d / H;

    Tensor out({L, d});
    for (int64_t h = 0; h < H; ++h) {
        // Erase factors M_j = I - g_j beta_j k_j k_j', one per position.
        std::vector<Tensor> erase_factor(static_cast<size_t>(L));
        for (int64_t j = 0; j < L; ++j) {
            Tensor m({dh, dh});
            const double* k_row = in.k.data() + j * d + h * dh;
            const double c = in.erase(j);
            for (int64_t a = 0; a < dh; ++a) {
                for (int64_t b = 0; b < dh; ++b) {
                    m(a, b) = (a == b ? 1.0 : 0.0) - c * k_row[a] * k_row[b];
                }
            }
            erase_factor[static_cast<size_t>(j)] = std::move(m);
        }

        for (int64_t t = 0; t < L; ++t) {
            const double* q_row = in.q.data() + t * d + h * dh;
            Tensor q_head = Tensor({dh, 1});
            for (int64_t a = 0; a < dh; ++a) q_head(a, 0) = q_row[a];

            // Walk i from t down to 1, extending D(t,i) = M_{i+1} D(t,i+1)
            // on the left; the i = t term uses the empty product D = I.
            Tensor mask({dh, dh});
            for (int64_t a = 0; a < dh; ++a) mask(a, a) = 1.0;

            double* out_row = out.data() + t * d + h * dh;
            for (int64_t i = t; i >= 0; --i) {
                if (i < t) {
                    mask = matmul(erase_factor[static_cast<size_t>(i + 1)], mask);
                }
                Tensor masked_q = matmul(mask, q_head);
                const double* k_row = in.k.data() + i * d + h * dh;
                double scale = 0.0;
                for (int64_t a = 0; a < dh; ++a) scale += k_row[a] * masked_q(a, 0);
                scale *= in.beta(i);
                const double* v_row = in.v.data() + i * d + h * dh;
                for (int64_t a = 0; a < dh; ++a) out_row[a] += scale * v_row[a];
            }
        }
    }
    out.ensure_finite("tadn_closed_form");
    return out;
}

Tensor tadn_layer_forward(const Tensor& h, const Tensor& event_times, double current_time,
                          const TadnLayerParams& params) {
    params.validate();
    HYT_CHECK_SHAPE(event_times.ndim() == 1 && event_times.dim(0) == h.rows(),
                    "event_times must be [L]");
    const Tensor normed = layer_norm(h, params.norm_gain, params.norm_shift);
    const Tensor tau = compute_temporal_decay(event_times, current_time, params.decay_period);
    const GateComponents gates = compute_gates(normed, tau, params);
    const Tensor fused = fuse_features(normed, gates);
    const Tensor scanned = tadn_scan(fused, gates, params);
    Tensor out = apply_linear(params.out_proj, scanned);
    for (int64_t i = 0; i < out.size(); ++i) out(i) += h(i);
    out.ensure_finite("tadn_layer_forward");
    return out;
}

}  // namespace hytrec
