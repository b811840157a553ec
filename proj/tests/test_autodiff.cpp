#include <cmath>

#include "doctest.h"
#include "hytrec/autodiff.hpp"
#include "hytrec/gradcheck.hpp"
#include "hytrec/rng.hpp"

using namespace hytrec;
namespace A = hytrec::ad;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t) x = rng.uniform(lo, hi);
    return t;
}

// Contract any tensor to a scalar with fixed random weights so the op
// under test receives a dense, non-trivial upstream gradient.
A::Var weighted_sum(A::Var y, const Tensor& weights) {
    return A::sum_all(A::mul(y, y.tape->leaf(weights)));
}

}  // namespace

TEST_CASE("composed scalar chain sigmoid(2x) has gradient 0.5 at x=0") {
    Parameter x("x", Tensor::scalar(0.0));
    A::Tape tape;
    A::Var v = A::sigmoid(A::affine_scalar(tape.param(x), 2.0, 0.0));
    tape.backward(v);
    CHECK(x.grad(0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("unused parameter receives exactly zero gradient") {
    Rng rng(40);
    Parameter used("used", random_tensor(rng, {2, 2}));
    Parameter unused("unused", random_tensor(rng, {2, 2}));
    A::Tape tape;
    A::Var y = A::mul(tape.param(used), tape.param(used));
    A::Var loss = weighted_sum(y, random_tensor(rng, {2, 2}));
    (void)tape.param(unused);
    tape.backward(loss);
    for (int64_t i = 0; i < unused.grad.size(); ++i) CHECK(unused.grad(i) == 0.0);
    bool used_nonzero = false;
    for (int64_t i = 0; i < used.grad.size(); ++i) used_nonzero |= used.grad(i) != 0.0;
    CHECK(used_nonzero);
}

namespace {

void expect_fd_pass(std::vector<Parameter*> params, const LossBuilder& builder) {
    auto results = gradient_check(params, builder);
    for (const auto& r : results) {
        INFO("group ", r.group, " max_rel_err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

}  // namespace

TEST_CASE("elementwise and shape ops pass finite differences") {
    Rng rng(41);
    const int64_t L = 5, d = 4;
    Parameter a("a", random_tensor(rng, {L, d}));
    Parameter b("b", random_tensor(rng, {L, d}));
    Tensor cw = random_tensor(rng, {L, d});
    Tensor cw_wide = random_tensor(rng, {L, 2 * d});
    Tensor cw_half = random_tensor(rng, {L, 2});
    Tensor cw_rows = random_tensor(rng, {2, d});

    expect_fd_pass({&a, &b}, [&](A::Tape& t) {
        A::Var av = t.param(a), bv = t.param(b);
        A::Var y = A::add(A::mul(av, bv), A::sub(av, A::affine_scalar(bv, 0.3, -0.1)));
        return weighted_sum(y, cw);
    });

    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::silu(t.param(a)), cw);
    });
    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::elu1(t.param(a)), cw);
    });
    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::sigmoid(t.param(a)), cw);
    });
    expect_fd_pass({&a, &b}, [&](A::Tape& t) {
        return weighted_sum(A::concat_cols({t.param(a), t.param(b)}), cw_wide);
    });
    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::slice_cols(t.param(a), 1, 3), cw_half);
    });
    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::slice_rows(t.param(a), 2, 4), cw_rows);
    });
    Tensor cw3 = random_tensor(rng, {L, 3});
    expect_fd_pass({&a, &b}, [&](A::Tape& t) {
        A::Var s = A::rowdot(t.param(a), t.param(b));
        return weighted_sum(A::broadcast_col(s, 3), cw3);
    });
    expect_fd_pass({&a, &b}, [&](A::Tape& t) {
        A::Var s = A::rowdot(t.param(b), t.param(b));
        return weighted_sum(A::colscale(t.param(a), s), cw);
    });
    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::causal_mean(t.param(a)), cw);
    });
    expect_fd_pass({&a}, [&](A::Tape& t) {
        return weighted_sum(A::l2norm_rows(t.param(a)), cw);
    });
}

TEST_CASE("linear algebra ops pass finite differences") {
    Rng rng(42);
    Parameter x("x", random_tensor(rng, {4, 3}));
    Parameter w("w", random_tensor(rng, {3, 5}));
    Parameter b("b", random_tensor(rng, {5}));
    Parameter w1("w1", random_tensor(rng, {3, 1}));
    Parameter b1("b1", random_tensor(rng, {1}));
    Parameter gain("gain", random_tensor(rng, {3}, 0.5, 1.5));
    Parameter shift("shift", random_tensor(rng, {3}));
    Parameter m("m", random_tensor(rng, {3, 5}));
    Parameter m2("m2", random_tensor(rng, {5, 3}));
    Tensor cw45 = random_tensor(rng, {4, 5});
    Tensor cw42 = random_tensor(rng, {4, 2});
    Tensor cw43 = random_tensor(rng, {4, 3});

    expect_fd_pass({&x, &w, &b}, [&](A::Tape& t) {
        return weighted_sum(A::affine(t.param(x), t.param(w), t.param(b)), cw45);
    });
    expect_fd_pass({&x, &m}, [&](A::Tape& t) {
        return weighted_sum(A::matmul(t.param(x), A::slice_cols(t.param(m), 0, 2)), cw42);
    });
    expect_fd_pass({&x, &m2}, [&](A::Tape& t) {
        return weighted_sum(A::matmul_nt(t.param(x), t.param(m2)), cw45);
    });
    expect_fd_pass({&x, &w1, &b1}, [&](A::Tape& t) {
        A::Var s = A::affine_vec(t.param(x), t.param(w1), t.param(b1));
        return weighted_sum(A::broadcast_col(s, 2), cw42);
    });
    expect_fd_pass({&x, &gain, &shift}, [&](A::Tape& t) {
        return weighted_sum(A::layer_norm(t.param(x), t.param(gain), t.param(shift)), cw43);
    });
}

TEST_CASE("embedding gather passes finite differences") {
    Rng rng(43);
    Parameter table("table", random_tensor(rng, {6, 4}));
    std::vector<int64_t> ids{0, 3, 3, 5, 1};
    Tensor cw = random_tensor(rng, {5, 4});
    expect_fd_pass({&table}, [&](A::Tape& t) {
        return weighted_sum(A::embedding_rows(t.param(table), ids), cw);
    });
}

TEST_CASE("softmax attention op passes finite differences") {
    Rng rng(44);
    const int64_t L = 6, d = 3;
    Parameter q("q", random_tensor(rng, {L, d}));
    Parameter k("k", random_tensor(rng, {L, d}));
    Parameter v("v", random_tensor(rng, {L, d}));
    Tensor cw = random_tensor(rng, {L, d});
    expect_fd_pass({&q, &k, &v}, [&](A::Tape& t) {
        return weighted_sum(A::softmax_attention_causal(t.param(q), t.param(k), t.param(v)), cw);
    });
}

TEST_CASE("linear attention op passes finite differences") {
    Rng rng(45);
    const int64_t L = 7, d = 3;
    Parameter q("q", random_tensor(rng, {L, d}));
    Parameter k("k", random_tensor(rng, {L, d}));
    Parameter v("v", random_tensor(rng, {L, d}));
    Tensor cw = random_tensor(rng, {L, d});
    expect_fd_pass({&q, &k, &v}, [&](A::Tape& t) {
        return weighted_sum(A::linear_attention_causal(A::elu1(t.param(q)), A::elu1(t.param(k)),
                                                       t.param(v)),
                            cw);
    });
}

TEST_CASE("tadn scan op passes finite differences through its full input path") {
    Rng rng(46);
    const int64_t L = 6, d = 4;
    Parameter x("x", random_tensor(rng, {L, d}));
    Parameter wq("wq", random_tensor(rng, {d, d}));
    Parameter wk("wk", random_tensor(rng, {d, d}));
    Parameter wv("wv", random_tensor(rng, {d, d}));
    Parameter wb("wb", random_tensor(rng, {d, 1}));
    Parameter bb("bb", random_tensor(rng, {1}));
    Parameter wg("wg", random_tensor(rng, {d, 1}));
    Parameter bg("bg", random_tensor(rng, {1}));
    Parameter bias("bias", random_tensor(rng, {d}));
    Tensor cw = random_tensor(rng, {L, d});

    expect_fd_pass({&x, &wq, &wk, &wv, &wb, &bb, &wg, &bg, &bias}, [&](A::Tape& t) {
        A::Var xv = t.param(x);
        A::Var q = A::affine(xv, t.param(wq), t.param(bias));
        A::Var k = A::l2norm_rows(A::affine(xv, t.param(wk), t.param(bias)));
        A::Var v = A::affine(xv, t.param(wv), t.param(bias));
        A::Var beta = A::sigmoid(A::affine_vec(xv, t.param(wb), t.param(bb)));
        A::Var gate = A::sigmoid(A::affine_vec(xv, t.param(wg), t.param(bg)));
        return weighted_sum(A::tadn_scan(q, k, v, beta, gate), cw);
    });
}

TEST_CASE("cross entropy matches direct evaluation and passes finite differences") {
    Rng rng(47);
    const int64_t V = 9;
    Parameter logits("logits", random_tensor(rng, {1, V}, -2.0, 2.0));
    {
        A::Tape t;
        A::Var loss = A::cross_entropy(t.param(logits), 4);
        double denom = 0.0;
        for (int64_t j = 0; j < V; ++j) denom += std::exp(logits.value(0, j));
        const double direct = -std::log(std::exp(logits.value(0, 4)) / denom);
        CHECK(loss.value()(0) == doctest::Approx(direct).epsilon(1e-12));
    }
    expect_fd_pass({&logits}, [&](A::Tape& t) {
        return A::cross_entropy(t.param(logits), 4);
    });
}

TEST_CASE("backward accumulates across shared subexpressions") {
    // y = x*x + x: dy/dx = 2x + 1.
    Parameter x("x", Tensor::scalar(3.0));
    A::Tape tape;
    A::Var xv = tape.param(x);
    A::Var y = A::add(A::mul(xv, xv), xv);
    tape.backward(y);
    CHECK(x.grad(0) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("fault injection flags exactly the corrupted group") {
    Rng rng(48);
    Parameter a("a", random_tensor(rng, {3, 3}));
    Parameter b("b", random_tensor(rng, {3, 3}));
    Tensor cw = random_tensor(rng, {3, 3});
    auto builder = [&](A::Tape& t) {
        return weighted_sum(A::mul(A::sigmoid(t.param(a)), t.param(b)), cw);
    };
    auto results = gradient_check({&a, &b}, builder, 1e-5, 1e-4, "b");
    REQUIRE(results.size() == 2);
    CHECK(results[0].group == "a");
    CHECK(results[0].pass);
    CHECK(results[1].group == "b");
    CHECK_FALSE(results[1].pass);
}

TEST_CASE("non-recording tape computes identical values") {
    Rng rng(49);
    Parameter a("a", random_tensor(rng, {4, 4}));
    Parameter w("w", random_tensor(rng, {4, 4}));
    auto build = [&](A::Tape& t) {
        return A::softmax_attention_causal(A::affine(t.param(a), t.param(w), t.leaf(Tensor({4}))),
                                           t.param(a), t.param(a));
    };
    A::Tape rec(true), norec(false);
    A::Var y1 = build(rec);
    A::Var y2 = build(norec);
    for (int64_t i = 0; i < y1.value().size(); ++i) CHECK(y1.value()(i) == y2.value()(i));
    CHECK_THROWS_AS(norec.backward(y2), Error);
}
