#include "hytrec/ops.hpp"

#include <algorithm>
#include <cmath>

namespace hytrec {

LinearLayer::LinearLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
    HYT_CHECK_SHAPE(weight.ndim() == 2, "linear weight must be 2-d");
    HYT_CHECK_SHAPE(bias.ndim() == 1 && bias.dim(0) == weight.dim(1),
                    "linear bias must be [d_out]=", weight.dim(1));
}

Tensor apply_linear(const LinearLayer& layer, const Tensor& x) {
    HYT_CHECK_SHAPE(x.ndim() == 2 && x.cols() == layer.weight.dim(0),
                    "linear input dim ", x.ndim() == 2 ? x.cols() : -1, " != ",
                    layer.weight.dim(0));
    Tensor out = matmul(x, layer.weight);
    const int64_t n = out.cols();
    for (int64_t i = 0; i < out.rows(); ++i) {
        double* row = out.data() + i * n;
        for (int64_t j = 0; j < n; ++j) row[j] += layer.bias(j);
    }
    return out;
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
    HYT_CHECK_SHAPE(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2,
                    "attention inputs must be 2-d");
    HYT_CHECK_SHAPE(q.same_shape(k) && k.same_shape(v), "attention inputs must share [L x d]");
}

}  // namespace

AttentionOutput softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                  bool causal) {
    check_qkv(q, k, v);
    const int64_t L = q.rows(), d = q.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor weights({L, L});
    Tensor out({L, d});
    for (int64_t t = 0; t < L; ++t) {
        const int64_t limit = causal ? t + 1 : L;
        const double* q_row = q.data() + t * d;
        double max_score = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < limit; ++i) {
            const double* k_row = k.data() + i * d;
            double s = 0.0;
            for (int64_t j = 0; j < d; ++j) s += q_row[j] * k_row[j];
            s *= scale;
            weights(t, i) = s;
            max_score = std::max(max_score, s);
        }
        double denom = 0.0;
        for (int64_t i = 0; i < limit; ++i) {
            double w = std::exp(weights(t, i) - max_score);
            weights(t, i) = w;
            denom += w;
        }
        double* out_row = out.data() + t * d;
        for (int64_t i = 0; i < limit; ++i) {
            const double w = weights(t, i) / denom;
            weights(t, i) = w;
            const double* v_row = v.data() + i * d;
            for (int64_t j = 0; j < d; ++j) out_row[j] += w * v_row[j];
        }
    }
    out.ensure_finite("softmax_attention");
    AttentionOutput result;
    result.values = std::move(out);
    result.weights = std::move(weights);
    return result;
}

Tensor linear_attention_baseline(const Tensor& q, const Tensor& k, const Tensor& v,
                                 bool causal) {
    check_qkv(q, k, v);
    const int64_t L = q.rows(), d = q.cols();

    Tensor qf({L, d}), kf({L, d});
    for (int64_t i = 0; i < L * d; ++i) {
        qf(i) = elu1(q(i));
        kf(i) = elu1(k(i));
    }

    Tensor out({L, d});
    if (causal) {
        // Running state: key_sum accumulates phi(k), kv accumulates v phi(k)'.
        Tensor key_sum({d});
        Tensor kv({d, d});
        for (int64_t t = 0; t < L; ++t) {
            const double* k_row = kf.data() + t * d;
            const double* v_row = v.data() + t * d;
            for (int64_t a = 0; a < d; ++a) {
                key_sum(a) += k_row[a];
                double* kv_row = kv.data() + a * d;
                const double va = v_row[a];
                for (int64_t b = 0; b < d; ++b) kv_row[b] += va * k_row[b];
            }
            const double* q_row = qf.data() + t * d;
            double denom = 0.0;
            for (int64_t a = 0; a < d; ++a) denom += q_row[a] * key_sum(a);
            denom = std::max(denom, kLinearAttentionNormFloor);
            double* out_row = out.data() + t * d;
            for (int64_t a = 0; a < d; ++a) {
                const double* kv_row = kv.data() + a * d;
                double acc = 0.0;
                for (int64_t b = 0; b < d; ++b) acc += kv_row[b] * q_row[b];
                out_row[a] = acc / denom;
            }
        }
    } else {
        Tensor key_sum({d});
        Tensor kv({d, d});
        for (int64_t t = 0; t < L; ++t) {
            const double* k_row = kf.data() + t * d;
            const double* v_row = v.data() + t * d;
            for (int64_t a = 0; a < d; ++a) {
                key_sum(a) += k_row[a];
                double* kv_row = kv.data() + a * d;
                for (int64_t b = 0; b < d; ++b) kv_row[b] += v_row[a] * k_row[b];
            }
        }
        for (int64_t t = 0; t < L; ++t) {
            const double* q_row = qf.data() + t * d;
            double denom = 0.0;
            for (int64_t a = 0; a < d; ++a) denom += q_row[a] * key_sum(a);
            denom = std::max(denom, kLinearAttentionNormFloor);
            double* out_row = out.data() + t * d;
            for (int64_t a = 0; a < d; ++a) {
                const double* kv_row = kv.data() + a * d;
                double acc = 0.0;
                for (int64_t b = 0; b < d; ++b) acc += kv_row[b] * q_row[b];
                out_row[a] = acc / denom;
            }
        }
    }
    out.ensure_finite("linear_attention_baseline");
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift) {
    HYT_CHECK_SHAPE(x.ndim() >= 1, "layer_norm input must have >= 1 dim");
    const int64_t d = x.dim(x.ndim() - 1);
    HYT_CHECK_SHAPE(gain.ndim() == 1 && gain.dim(0) == d && shift.ndim() == 1 &&
                        shift.dim(0) == d,
                    "layer_norm gain/shift must be [", d, "]");
    const int64_t n_rows = d == 0 ? 0 : x.size() / d;
    Tensor out(x.shape());
    for (int64_t r = 0; r < n_rows; ++r) {
        const double* row = x.data() + r * d;
        double* out_row = out.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        for (int64_t j = 0; j < d; ++j) {
            out_row[j] = (row[j] - mean) * inv * gain(j) + shift(j);
        }
    }
    out.ensure_finite("layer_norm");
    return out;
}

}  // namespace hytrec
