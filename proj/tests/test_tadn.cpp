#include <cmath>

#include "doctest.h"
#include "hytrec/rng.hpp"
#include "hytrec/tadn.hpp"

using namespace hytrec;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t) x = rng.uniform(lo, hi);
    return t;
}

LinearLayer random_linear(Rng& rng, int64_t d_in, int64_t d_out, double scale = 0.5) {
    return LinearLayer(random_tensor(rng, {d_in, d_out}, -scale, scale),
                       random_tensor(rng, {d_out}, -scale, scale));
}

TadnLayerParams random_params(Rng& rng, int64_t d, int64_t heads = 1, double alpha = 0.5,
                              double T = 10.0) {
    TadnLayerParams p;
    p.gate_proj = random_linear(rng, 2 * d, d);
    p.gate_scalar_proj = random_linear(rng, d, 1);
    p.q_proj = random_linear(rng, d, d);
    p.k_proj = random_linear(rng, d, d);
    p.v_proj = random_linear(rng, d, d);
    p.beta_proj = random_linear(rng, d, 1);
    p.out_proj = random_linear(rng, d, d);
    p.norm_gain = Tensor::from({d}, std::vector<double>(static_cast<size_t>(d), 1.0));
    p.norm_shift = Tensor({d});
    p.alpha = alpha;
    p.decay_period = T;
    p.n_heads = heads;
    return p;
}

// Ascending event times ending at or before current_time.
Tensor random_times(Rng& rng, int64_t L, double current_time) {
    Tensor times({L});
    double t = current_time;
    for (int64_t i = L - 1; i >= 0; --i) {
        t -= rng.uniform(0.0, 3.0);
        times(i) = t;
    }
    return times;
}

GateComponents random_gates(Rng& rng, const Tensor& h, const TadnLayerParams& params) {
    const double now = 100.0;
    Tensor times = random_times(rng, h.rows(), now);
    Tensor tau = compute_temporal_decay(times, now, params.decay_period);
    return compute_gates(h, tau, params);
}

double frobenius_rel_err(const Tensor& a, const Tensor& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        diff += (a(i) - b(i)) * (a(i) - b(i));
        na += a(i) * a(i);
        nb += b(i) * b(i);
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace

TEST_CASE("temporal decay hits analytic values") {
    Tensor times = Tensor::from({3}, {10.0, 8.0, 4.0});
    Tensor tau = compute_temporal_decay(times, 10.0, 2.0);
    CHECK(tau(0) == doctest::Approx(1.0));               // elapsed 0
    CHECK(tau(1) == doctest::Approx(std::exp(-1.0)));    // elapsed == T
    CHECK(tau(2) == doctest::Approx(std::exp(-3.0)));    // elapsed == 3T
}

TEST_CASE("temporal decay matches scalar exp oracle pointwise") {
    Rng rng(21);
    const double now = 50.0, T = 7.5;
    Tensor times = random_times(rng, 40, now);
    Tensor tau = compute_temporal_decay(times, now, T);
    for (int64_t i = 0; i < 40; ++i) {
        CHECK(tau(i) == doctest::Approx(std::exp(-(now - times(i)) / T)).epsilon(1e-15));
        CHECK(tau(i) > 0.0);
        CHECK(tau(i) <= 1.0);
    }
}

TEST_CASE("temporal decay is strictly monotone in elapsed time") {
    Tensor times = Tensor::from({4}, {1.0, 2.0, 5.0, 9.0});
    Tensor tau = compute_temporal_decay(times, 9.0, 3.0);
    for (int64_t i = 0; i + 1 < 4; ++i) CHECK(tau(i) < tau(i + 1));
}

TEST_CASE("temporal decay rejects bad inputs") {
    Tensor times = Tensor::from({1}, {5.0});
    CHECK_THROWS_AS(compute_temporal_decay(times, 4.0, 1.0), Error);   // negative elapsed
    CHECK_THROWS_AS(compute_temporal_decay(times, 6.0, 0.0), Error);   // T == 0
    CHECK_THROWS_AS(compute_temporal_decay(times, 6.0, -1.0), Error);  // T < 0
}

TEST_CASE("gates vanish in the ancient-behavior limit with alpha=1") {
    Rng rng(22);
    const int64_t L = 5, d = 4;
    TadnLayerParams p = random_params(rng, d, 1, /*alpha=*/1.0);
    Tensor h = random_tensor(rng, {L, d});
    Tensor tau({L});
    for (int64_t i = 0; i < L; ++i) tau(i) = 1e-300;  // tau -> 0+ limit
    GateComponents g = compute_gates(h, tau, p);
    for (int64_t i = 0; i < g.g_vec.size(); ++i) CHECK(g.g_vec(i) < 1e-290);
    for (int64_t i = 0; i < L; ++i) CHECK(g.g_scalar(i) < 1e-290);
}

TEST_CASE("alpha=0 reduces both gates to the static gate") {
    Rng rng(23);
    const int64_t L = 6, d = 4;
    TadnLayerParams p = random_params(rng, d, 1, /*alpha=*/0.0);
    Tensor h = random_tensor(rng, {L, d});
    Tensor tau = random_tensor(rng, {L}, 0.01, 1.0);
    GateComponents g = compute_gates(h, tau, p);
    for (int64_t t = 0; t < L; ++t) {
        CHECK(g.g_scalar(t) == doctest::Approx(g.g_static(t)));
        for (int64_t j = 0; j < d; ++j) CHECK(g.g_vec(t, j) == doctest::Approx(g.g_static(t)));
    }
}

TEST_CASE("single-position gates match hand computation") {
    Rng rng(24);
    const int64_t d = 4;
    TadnLayerParams p = random_params(rng, d);
    Tensor h = random_tensor(rng, {1, d});
    Tensor tau = Tensor::from({1}, {0.8});
    GateComponents g = compute_gates(h, tau, p);

    double norm2 = 0.0;
    for (int64_t j = 0; j < d; ++j) norm2 += h(0, j) * h(0, j);
    CHECK(g.h_bar(0, 0) == doctest::Approx(h(0, 0)));
    for (int64_t j = 0; j < d; ++j) CHECK(g.delta_h(0, j) == doctest::Approx(0.0));
    CHECK(g.g_static(0) == doctest::Approx(sigmoid(norm2 / std::sqrt(double(d)))));
}

TEST_CASE("gate outputs stay in [0,1] and tau in (0,1] over random draws") {
    Rng rng(25);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t L = 1 + rng.uniform_int(12), d = 2 + 2 * rng.uniform_int(4);
        TadnLayerParams p = random_params(rng, d, 1, rng.uniform(0.0, 1.0));
        Tensor h = random_tensor(rng, {L, d}, -3.0, 3.0);
        GateComponents g = random_gates(rng, h, p);
        for (int64_t i = 0; i < L; ++i) {
            CHECK(g.tau(i) > 0.0);
            CHECK(g.tau(i) <= 1.0);
            CHECK(g.g_static(i) > 0.0);
            CHECK(g.g_static(i) < 1.0);
            CHECK(g.g_scalar(i) >= 0.0);
            CHECK(g.g_scalar(i) <= 1.0);
        }
        for (int64_t i = 0; i < g.g_vec.size(); ++i) {
            CHECK(g.g_vec(i) >= 0.0);
            CHECK(g.g_vec(i) <= 1.0);
        }
    }
}

TEST_CASE("gating prioritizes the more recent of two otherwise-identical positions") {
    Rng rng(26);
    const int64_t d = 6;
    TadnLayerParams p = random_params(rng, d, 1, /*alpha=*/1.0);
    Tensor row = random_tensor(rng, {1, d});
    Tensor h({2, d});
    for (int64_t j = 0; j < d; ++j) {
        h(0, j) = row(0, j);
        h(1, j) = row(0, j);  // identical features, only elapsed time differs
    }
    Tensor times = Tensor::from({2}, {0.0, 9.0});
    Tensor tau = compute_temporal_decay(times, 10.0, 5.0);
    GateComponents g = compute_gates(h, tau, p);
    CHECK(g.g_scalar(1) > g.g_scalar(0));
    for (int64_t j = 0; j < d; ++j) CHECK(g.g_vec(1, j) > g.g_vec(0, j));
}

TEST_CASE("fusion endpoints") {
    Rng rng(27);
    const int64_t L = 4, d = 5;
    Tensor h = random_tensor(rng, {L, d});
    TadnLayerParams p = random_params(rng, d);
    GateComponents g = random_gates(rng, h, p);

    g.g_vec.fill(0.0);
    Tensor fused = fuse_features(h, g);
    for (int64_t i = 0; i < h.size(); ++i) CHECK(fused(i) == h(i));

    g.g_vec.fill(1.0);
    fused = fuse_features(h, g);
    for (int64_t i = 0; i < h.size(); ++i) CHECK(fused(i) == g.delta_h(i));

    g.g_vec.fill(0.5);
    fused = fuse_features(h, g);
    for (int64_t i = 0; i < h.size(); ++i)
        CHECK(fused(i) == doctest::Approx((g.delta_h(i) + h(i)) / 2.0));
}

TEST_CASE("fusion is a per-coordinate convex combination") {
    Rng rng(28);
    for (int trial = 0; trial < 30; ++trial) {
        const int64_t L = 1 + rng.uniform_int(8), d = 2 + rng.uniform_int(6);
        TadnLayerParams p = random_params(rng, d, 1, rng.uniform(0.0, 1.0));
        Tensor h = random_tensor(rng, {L, d}, -2.0, 2.0);
        GateComponents g = random_gates(rng, h, p);
        Tensor fused = fuse_features(h, g);
        for (int64_t i = 0; i < h.size(); ++i) {
            CHECK(fused(i) >= std::min(g.delta_h(i), h(i)) - 1e-12);
            CHECK(fused(i) <= std::max(g.delta_h(i), h(i)) + 1e-12);
        }
    }
}

TEST_CASE("scan single step matches the delta-rule hand case") {
    Rng rng(29);
    const int64_t d = 4;
    TadnLayerParams p = random_params(rng, d);
    Tensor h = random_tensor(rng, {1, d});
    GateComponents g = random_gates(rng, h, p);
    Tensor out = tadn_scan(h, g, p);

    // Independent projection: S_1 = beta v k', o_1 = beta (k.q) v.
    Tensor q = apply_linear(p.q_proj, h);
    Tensor k = apply_linear(p.k_proj, h);
    Tensor v = apply_linear(p.v_proj, h);
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) norm += k(0, j) * k(0, j);
    norm = std::sqrt(norm);
    const double beta = sigmoid(apply_linear(p.beta_proj, h)(0, 0));
    double kq = 0.0;
    for (int64_t j = 0; j < d; ++j) kq += (k(0, j) / norm) * q(0, j);
    for (int64_t j = 0; j < d; ++j) CHECK(out(0, j) == doctest::Approx(beta * kq * v(0, j)));
}

TEST_CASE("zero scalar gate degenerates to pure accumulation") {
    Rng rng(30);
    const int64_t L = 7, d = 4;
    TadnLayerParams p = random_params(rng, d);
    Tensor h = random_tensor(rng, {L, d});
    GateComponents g = random_gates(rng, h, p);
    g.g_scalar.fill(0.0);
    Tensor out = tadn_scan(h, g, p);

    // Accumulation oracle: S_t = sum_{i<=t} beta_i v_i k_i' (unnormalized
    // linear attention with these q/k/v).
    auto in = detail::project_scan_inputs(h, g, p);
    Tensor want({L, d});
    Tensor state({d, d});
    for (int64_t t = 0; t < L; ++t) {
        for (int64_t a = 0; a < d; ++a)
            for (int64_t b = 0; b < d; ++b) state(a, b) += in.beta(t) * in.v(t, a) * in.k(t, b);
        for (int64_t a = 0; a < d; ++a) {
            double acc = 0.0;
            for (int64_t b = 0; b < d; ++b) acc += state(a, b) * in.q(t, b);
            want(t, a) = acc;
        }
    }
    CHECK(frobenius_rel_err(out, want) < 1e-12);
}

TEST_CASE("closed form empty product term uses the identity mask") {
    Rng rng(31);
    const int64_t d = 3;
    TadnLayerParams p = random_params(rng, d);
    Tensor h = random_tensor(rng, {1, d});
    GateComponents g = random_gates(rng, h, p);
    Tensor scan_out = tadn_scan(h, g, p);
    Tensor closed_out = tadn_closed_form(h, g, p);
    for (int64_t j = 0; j < d; ++j) CHECK(closed_out(0, j) == doctest::Approx(scan_out(0, j)));
}

TEST_CASE("closed form matches the L=2 symbolic hand expansion") {
    Rng rng(32);
    const int64_t d = 3;
    TadnLayerParams p = random_params(rng, d);
    Tensor h = random_tensor(rng, {2, d});
    GateComponents g = random_gates(rng, h, p);
    Tensor out = tadn_closed_form(h, g, p);

    auto in = detail::project_scan_inputs(h, g, p);
    // o_2 = beta_2 (k_2.q_2) v_2 + beta_1 v_1 k_1'(I - g_2 beta_2 k_2 k_2') q_2
    double k2q2 = 0.0, k2k2q2 = 0.0, k1q2 = 0.0, k1k2 = 0.0;
    for (int64_t j = 0; j < d; ++j) {
        k2q2 += in.k(1, j) * in.q(1, j);
        k1q2 += in.k(0, j) * in.q(1, j);
        k1k2 += in.k(0, j) * in.k(1, j);
    }
    k2k2q2 = k1k2 * k2q2;  // k_1'k_2 (k_2'q_2)
    const double c2 = in.erase(1);
    for (int64_t j = 0; j < d; ++j) {
        const double want = in.beta(1) * k2q2 * in.v(1, j) +
                            in.beta(0) * in.v(0, j) * (k1q2 - c2 * k2k2q2);
        CHECK(out(1, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("scan matches closed form on the pinned size grid") {
    Rng rng(33);
    for (int64_t L : {2, 5, 17, 33}) {
        for (int64_t d : {3, 8}) {
            for (int64_t heads : {int64_t{1}, d == 8 ? int64_t{4} : int64_t{1}}) {
                TadnLayerParams p = random_params(rng, d, heads, rng.uniform(0.0, 1.0));
                Tensor h = random_tensor(rng, {L, d}, -2.0, 2.0);
                GateComponents g = random_gates(rng, h, p);
                Tensor scan_out = tadn_scan(h, g, p);
                Tensor closed_out = tadn_closed_form(h, g, p);
                CHECK(frobenius_rel_err(scan_out, closed_out) < 1e-8);
            }
        }
    }
}

TEST_CASE("state norm obeys the additive write bound") {
    Rng rng(34);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t L = 1 + rng.uniform_int(20);
        const int64_t d = 4 + 2 * rng.uniform_int(4);
        const int64_t heads = (d % 4 == 0 && trial % 2 == 0) ? 2 : 1;
        TadnLayerParams p = random_params(rng, d, heads, rng.uniform(0.0, 1.0));
        Tensor h = random_tensor(rng, {L, d}, -2.0, 2.0);
        GateComponents g = random_gates(rng, h, p);
        std::vector<TadnState> states;
        tadn_scan(h, g, p, &states);

        auto in = detail::project_scan_inputs(h, g, p);
        const int64_t dh = d / heads;
        for (int64_t head = 0; head < heads; ++head) {
            double bound = 0.0;
            for (int64_t t = 0; t < L; ++t) {
                double v_norm = 0.0;
                for (int64_t j = 0; j < dh; ++j) {
                    const double vj = in.v(t, head * dh + j);
                    v_norm += vj * vj;
                }
                bound += in.beta(t) * std::sqrt(v_norm);
                const Tensor& s = states[static_cast<size_t>(head * L + t)].s;
                double fro = 0.0;
                for (int64_t i = 0; i < s.size(); ++i) fro += s(i) * s(i);
                CHECK(std::sqrt(fro) <= bound + 1e-9);
            }
        }
    }
}

TEST_CASE("scan output is causal") {
    Rng rng(35);
    const int64_t L = 9, d = 4, cut = 5;
    TadnLayerParams p = random_params(rng, d);
    const double now = 40.0;
    Tensor times = random_times(rng, L, now);
    Tensor h = random_tensor(rng, {L, d});

    Tensor h2 = h;
    Tensor times2 = times;
    for (int64_t t = cut; t < L; ++t) {
        for (int64_t j = 0; j < d; ++j) h2(t, j) = rng.uniform(-5.0, 5.0);
        times2(t) = times(t) + 0.25;
    }

    Tensor out_a = tadn_layer_forward(h, times, now, p);
    Tensor out_b = tadn_layer_forward(h2, times2, now, p);
    for (int64_t t = 0; t < cut; ++t)
        for (int64_t j = 0; j < d; ++j) CHECK(out_a(t, j) == out_b(t, j));
}

TEST_CASE("layer forward with zero projections is the identity") {
    Rng rng(36);
    const int64_t L = 5, d = 4;
    TadnLayerParams p = random_params(rng, d);
    p.q_proj = LinearLayer(Tensor({d, d}), Tensor({d}));
    p.k_proj = LinearLayer(Tensor({d, d}), Tensor({d}));
    p.v_proj = LinearLayer(Tensor({d, d}), Tensor({d}));
    p.out_proj = LinearLayer(Tensor({d, d}), Tensor({d}));
    Tensor h = random_tensor(rng, {L, d});
    Tensor times = random_times(rng, L, 20.0);
    Tensor out = tadn_layer_forward(h, times, 20.0, p);
    for (int64_t i = 0; i < h.size(); ++i) CHECK(out(i) == h(i));
}

TEST_CASE("layer forward matches a monolithic inlined re-implementation") {
    Rng rng(37);
    const int64_t L = 8, d = 6, heads = 2;
    TadnLayerParams p = random_params(rng, d, heads, 0.7, 6.0);
    p.norm_gain = random_tensor(rng, {d}, 0.5, 1.5);
    p.norm_shift = random_tensor(rng, {d}, -0.5, 0.5);
    Tensor h = random_tensor(rng, {L, d});
    const double now = 30.0;
    Tensor times = random_times(rng, L, now);
    Tensor got = tadn_layer_forward(h, times, now, p);

    // Inlined oracle: every stage rewritten in place.
    const int64_t dh = d / heads;
    Tensor xn({L, d});
    for (int64_t t = 0; t < L; ++t) {
        double mean = 0.0, var = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += h(t, j);
        mean /= d;
        for (int64_t j = 0; j < d; ++j) var += (h(t, j) - mean) * (h(t, j) - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int64_t j = 0; j < d; ++j)
            xn(t, j) = (h(t, j) - mean) * inv * p.norm_gain(j) + p.norm_shift(j);
    }

    Tensor fused({L, d});
    std::vector<double> g_scalar(L);
    {
        std::vector<double> acc(d, 0.0);
        for (int64_t t = 0; t < L; ++t) {
            const double tau = std::exp(-(now - times(t)) / p.decay_period);
            std::vector<double> hbar(d), dh_row(d);
            for (int64_t j = 0; j < d; ++j) {
                acc[j] += xn(t, j);
                hbar[j] = acc[j] / (t + 1);
                dh_row[j] = xn(t, j) - hbar[j];
            }
            double dot = 0.0;
            for (int64_t j = 0; j < d; ++j) dot += xn(t, j) * hbar[j];
            const double g_static = sigmoid(dot / std::sqrt(double(d)));
            for (int64_t j = 0; j < d; ++j) {
                double pre = p.gate_proj.bias(j);
                for (int64_t i = 0; i < d; ++i) {
                    pre += xn(t, i) * p.gate_proj.weight(i, j);
                    pre += dh_row[i] * p.gate_proj.weight(d + i, j);
                }
                const double gv = p.alpha * sigmoid(pre) * tau + (1 - p.alpha) * g_static;
                fused(t, j) = gv * dh_row[j] + (1 - gv) * xn(t, j);
            }
            double pre_s = p.gate_scalar_proj.bias(0);
            for (int64_t i = 0; i < d; ++i) pre_s += xn(t, i) * p.gate_scalar_proj.weight(i, 0);
            g_scalar[t] = p.alpha * sigmoid(pre_s) * tau + (1 - p.alpha) * g_static;
        }
    }

    Tensor want = h;
    std::vector<Tensor> state(heads, Tensor({dh, dh}));
    for (int64_t t = 0; t < L; ++t) {
        std::vector<double> q(d), k(d), v(d);
        double beta_pre = p.beta_proj.bias(0);
        for (int64_t j = 0; j < d; ++j) {
            q[j] = p.q_proj.bias(j);
            k[j] = p.k_proj.bias(j);
            v[j] = p.v_proj.bias(j);
            for (int64_t i = 0; i < d; ++i) {
                q[j] += fused(t, i) * p.q_proj.weight(i, j);
                k[j] += fused(t, i) * p.k_proj.weight(i, j);
                v[j] += fused(t, i) * p.v_proj.weight(i, j);
            }
        }
        for (int64_t i = 0; i < d; ++i) beta_pre += fused(t, i) * p.beta_proj.weight(i, 0);
        const double beta = sigmoid(beta_pre);
        std::vector<double> o(d, 0.0);
        for (int64_t head = 0; head < heads; ++head) {
            double norm = 0.0;
            for (int64_t j = 0; j < dh; ++j) norm += k[head * dh + j] * k[head * dh + j];
            norm = std::max(std::sqrt(norm), 1e-12);
            std::vector<double> kh(dh);
            for (int64_t j = 0; j < dh; ++j) kh[j] = k[head * dh + j] / norm;
            Tensor& s = state[head];
            std::vector<double> sk(dh, 0.0);
            for (int64_t a = 0; a < dh; ++a)
                for (int64_t b = 0; b < dh; ++b) sk[a] += s(a, b) * kh[b];
            for (int64_t a = 0; a < dh; ++a)
                for (int64_t b = 0; b < dh; ++b)
                    s(a, b) += (beta * v[head * dh + a] - g_scalar[t] * beta * sk[a]) * kh[b];
            for (int64_t a = 0; a < dh; ++a)
                for (int64_t b = 0; b < dh; ++b) o[head * dh + a] += s(a, b) * q[head * dh + b];
        }
        for (int64_t j = 0; j < d; ++j) {
            double proj = p.out_proj.bias(j);
            for (int64_t i = 0; i < d; ++i) proj += o[i] * p.out_proj.weight(i, j);
            want(t, j) += proj;
        }
    }

    CHECK(frobenius_rel_err(got, want) < 1e-12);
}
