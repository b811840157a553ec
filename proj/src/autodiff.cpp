#include "hytrec/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "hytrec/ops.hpp"

namespace hytrec::ad {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
    for (int64_t i = 0; i < src.size(); ++i) dst(i) += src(i);
}

Tape* common_tape(Var a, Var b) {
    HYT_CHECK(Error, a.tape != nullptr && a.tape == b.tape, "vars must share one tape");
    return a.tape;
}

}  // namespace

const Tensor& Var::value() const { return tape->node(id).value; }
const Tensor& Var::grad() const { return tape->node(id).grad; }

int32_t Tape::push(Tensor value, std::vector<int32_t> parents,
                   std::function<void(Tape&, int32_t)> backward_fn, Parameter* parameter) {
    Node n;
    n.value = std::move(value);
    n.parameter = parameter;
    if (recording_) {
        n.needs_grad = parameter != nullptr;
        for (int32_t p : parents) {
            if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
        }
        if (n.needs_grad) {
            n.parents = std::move(parents);
            n.backward = std::move(backward_fn);
        }
    }
    nodes_.push_back(std::move(n));
    return static_cast<int32_t>(nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
    return Var{this, push(std::move(value), {}, nullptr, nullptr)};
}

Var Tape::param(Parameter& p) {
    return Var{this, push(p.value, {}, nullptr, &p)};
}

Tensor& Tape::grad_acc(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(Var root, double seed) {
    HYT_CHECK(Error, recording_, "backward on a non-recording tape");
    HYT_CHECK(Error, root.tape == this, "root var belongs to another tape");
    HYT_CHECK_SHAPE(node(root.id).value.size() == 1, "backward root must be scalar");
    grad_acc(root.id)(0) = seed;
    for (int32_t id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty() || !n.needs_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.parameter) add_into(n.parameter->grad, n.grad);
    }
}

void Tape::reset() { nodes_.clear(); }

namespace {

// Accumulate into a parent's grad only if it participates.
void acc_parent(Tape& t, int32_t pid, const Tensor& g) {
    if (t.node(pid).needs_grad) add_into(t.grad_acc(pid), g);
}

bool wants(Tape& t, int32_t pid) { return t.node(pid).needs_grad; }

}  // namespace

Var add(Var a, Var b) {
    Tape* t = common_tape(a, b);
    HYT_CHECK_SHAPE(a.value().same_shape(b.value()), "add shape mismatch");
    Tensor out = a.value();
    add_into(out, b.value());
    int32_t id = t->push(std::move(out), {a.id, b.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        acc_parent(t, t.node(self).parents[0], g);
        acc_parent(t, t.node(self).parents[1], g);
    });
    return Var{t, id};
}

Var sub(Var a, Var b) {
    Tape* t = common_tape(a, b);
    HYT_CHECK_SHAPE(a.value().same_shape(b.value()), "sub shape mismatch");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out(i) -= b.value()(i);
    int32_t id = t->push(std::move(out), {a.id, b.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        acc_parent(t, t.node(self).parents[0], g);
        int32_t pb = t.node(self).parents[1];
        if (wants(t, pb)) {
            Tensor& gb = t.grad_acc(pb);
            for (int64_t i = 0; i < g.size(); ++i) gb(i) -= g(i);
        }
    });
    return Var{t, id};
}

Var mul(Var a, Var b) {
    Tape* t = common_tape(a, b);
    HYT_CHECK_SHAPE(a.value().same_shape(b.value()), "mul shape mismatch");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out(i) *= b.value()(i);
    int32_t id = t->push(std::move(out), {a.id, b.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& parents = t.node(self).parents;
        const Tensor& av = t.node(parents[0]).value;
        const Tensor& bv = t.node(parents[1]).value;
        if (wants(t, parents[0])) {
            Tensor& ga = t.grad_acc(parents[0]);
            for (int64_t i = 0; i < g.size(); ++i) ga(i) += g(i) * bv(i);
        }
        if (wants(t, parents[1])) {
            Tensor& gb = t.grad_acc(parents[1]);
            for (int64_t i = 0; i < g.size(); ++i) gb(i) += g(i) * av(i);
        }
    });
    return Var{t, id};
}

Var add_n(const std::vector<Var>& xs) {
    HYT_CHECK(Error, !xs.empty(), "add_n of nothing");
    Tape* t = xs.front().tape;
    Tensor out = xs.front().value();
    std::vector<int32_t> parents{xs.front().id};
    for (size_t i = 1; i < xs.size(); ++i) {
        HYT_CHECK(Error, xs[i].tape == t, "add_n vars must share one tape");
        HYT_CHECK_SHAPE(xs[i].value().same_shape(out), "add_n shape mismatch");
        add_into(out, xs[i].value());
        parents.push_back(xs[i].id);
    }
    int32_t id = t->push(std::move(out), std::move(parents), [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        for (int32_t pid : t.node(self).parents) acc_parent(t, pid, g);
    });
    return Var{t, id};
}

Var sum_all(Var x) {
    Tape* t = x.tape;
    double total = 0.0;
    for (int64_t i = 0; i < x.value().size(); ++i) total += x.value()(i);
    int32_t id = t->push(Tensor::scalar(total), {x.id}, [](Tape& t, int32_t self) {
        const double g = t.node(self).grad(0);
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gx = t.grad_acc(p);
        for (int64_t i = 0; i < gx.size(); ++i) gx(i) += g;
    });
    return Var{t, id};
}

Var affine_scalar(Var x, double mul, double shift) {
    Tape* t = x.tape;
    Tensor out = x.value();
    for (double& v : out) v = mul * v + shift;
    int32_t id = t->push(std::move(out), {x.id}, [mul](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (wants(t, p)) {
            Tensor& gx = t.grad_acc(p);
            for (int64_t i = 0; i < g.size(); ++i) gx(i) += mul * g(i);
        }
    });
    return Var{t, id};
}

Var sigmoid(Var x) {
    Tape* t = x.tape;
    Tensor out = x.value();
    for (double& v : out) v = hytrec::sigmoid(v);
    int32_t id = t->push(std::move(out), {x.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        int32_t p = t.node(self).parents[0];
        if (wants(t, p)) {
            Tensor& gx = t.grad_acc(p);
            for (int64_t i = 0; i < g.size(); ++i) gx(i) += g(i) * y(i) * (1.0 - y(i));
        }
    });
    return Var{t, id};
}

Var silu(Var x) {
    Tape* t = x.tape;
    Tensor out = x.value();
    for (double& v : out) v = v * hytrec::sigmoid(v);
    int32_t id = t->push(std::move(out), {x.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        const Tensor& xin = t.node(p).value;
        Tensor& gx = t.grad_acc(p);
        for (int64_t i = 0; i < g.size(); ++i) {
            const double s = hytrec::sigmoid(xin(i));
            gx(i) += g(i) * s * (1.0 + xin(i) * (1.0 - s));
        }
    });
    return Var{t, id};
}

Var elu1(Var x) {
    Tape* t = x.tape;
    Tensor out = x.value();
    for (double& v : out) v = hytrec::elu1(v);
    int32_t id = t->push(std::move(out), {x.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        const Tensor& xin = t.node(p).value;
        Tensor& gx = t.grad_acc(p);
        for (int64_t i = 0; i < g.size(); ++i) {
            gx(i) += g(i) * (xin(i) > 0.0 ? 1.0 : y(i));
        }
    });
    return Var{t, id};
}

Var matmul(Var a, Var b) {
    Tape* t = common_tape(a, b);
    int32_t id = t->push(hytrec::matmul(a.value(), b.value()), {a.id, b.id},
                         [](Tape& t, int32_t self) {
                             const Tensor& g = t.node(self).grad;
                             const auto& ps = t.node(self).parents;
                             const Tensor& av = t.node(ps[0]).value;
                             const Tensor& bv = t.node(ps[1]).value;
                             if (wants(t, ps[0])) add_into(t.grad_acc(ps[0]), hytrec::matmul_nt(g, bv));
                             if (wants(t, ps[1])) add_into(t.grad_acc(ps[1]), hytrec::matmul_tn(av, g));
                         });
    return Var{t, id};
}

Var matmul_nt(Var a, Var b) {
    Tape* t = common_tape(a, b);
    int32_t id = t->push(hytrec::matmul_nt(a.value(), b.value()), {a.id, b.id},
                         [](Tape& t, int32_t self) {
                             const Tensor& g = t.node(self).grad;
                             const auto& ps = t.node(self).parents;
                             const Tensor& av = t.node(ps[0]).value;
                             const Tensor& bv = t.node(ps[1]).value;
                             if (wants(t, ps[0])) add_into(t.grad_acc(ps[0]), hytrec::matmul(g, bv));
                             if (wants(t, ps[1])) add_into(t.grad_acc(ps[1]), hytrec::matmul_tn(g, av));
                         });
    return Var{t, id};
}

Var affine(Var x, Var w, Var b) {
    Tape* t = common_tape(x, w);
    HYT_CHECK(Error, b.tape == t, "vars must share one tape");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    HYT_CHECK_SHAPE(xv.ndim() == 2 && wv.ndim() == 2 && xv.cols() == wv.rows(),
                    "affine dims disagree");
    HYT_CHECK_SHAPE(bv.ndim() == 1 && bv.dim(0) == wv.cols(), "affine bias must be [d_out]");
    Tensor out = hytrec::matmul(xv, wv);
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out(i, j) += bv(j);
    int32_t id = t->push(std::move(out), {x.id, w.id, b.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& xv = t.node(ps[0]).value;
        const Tensor& wv = t.node(ps[1]).value;
        if (wants(t, ps[0])) add_into(t.grad_acc(ps[0]), hytrec::matmul_nt(g, wv));
        if (wants(t, ps[1])) add_into(t.grad_acc(ps[1]), hytrec::matmul_tn(xv, g));
        if (wants(t, ps[2])) {
            Tensor& gb = t.grad_acc(ps[2]);
            for (int64_t i = 0; i < g.rows(); ++i)
                for (int64_t j = 0; j < g.cols(); ++j) gb(j) += g(i, j);
        }
    });
    return Var{t, id};
}

Var affine_vec(Var x, Var w, Var b) {
    Tape* t = common_tape(x, w);
    HYT_CHECK(Error, b.tape == t, "vars must share one tape");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    HYT_CHECK_SHAPE(wv.ndim() == 2 && wv.cols() == 1 && xv.cols() == wv.rows(),
                    "affine_vec wants w [d x 1]");
    HYT_CHECK_SHAPE(b.value().size() == 1, "affine_vec bias must be scalar");
    const int64_t L = xv.rows(), d = xv.cols();
    Tensor out({L});
    for (int64_t i = 0; i < L; ++i) {
        double acc = b.value()(0);
        for (int64_t j = 0; j < d; ++j) acc += xv(i, j) * wv(j, 0);
        out(i) = acc;
    }
    int32_t id = t->push(std::move(out), {x.id, w.id, b.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& xv = t.node(ps[0]).value;
        const Tensor& wv = t.node(ps[1]).value;
        const int64_t L = xv.rows(), d = xv.cols();
        if (wants(t, ps[0])) {
            Tensor& gx = t.grad_acc(ps[0]);
            for (int64_t i = 0; i < L; ++i)
                for (int64_t j = 0; j < d; ++j) gx(i, j) += g(i) * wv(j, 0);
        }
        if (wants(t, ps[1])) {
            Tensor& gw = t.grad_acc(ps[1]);
            for (int64_t i = 0; i < L; ++i)
                for (int64_t j = 0; j < d; ++j) gw(j, 0) += g(i) * xv(i, j);
        }
        if (wants(t, ps[2])) {
            Tensor& gb = t.grad_acc(ps[2]);
            for (int64_t i = 0; i < L; ++i) gb(0) += g(i);
        }
    });
    return Var{t, id};
}

Var layer_norm(Var x, Var gain, Var shift) {
    Tape* t = common_tape(x, gain);
    HYT_CHECK(Error, shift.tape == t, "vars must share one tape");
    const Tensor& xv = x.value();
    const int64_t d = xv.dim(xv.ndim() - 1);
    const int64_t n_rows = xv.size() / d;

    Tensor inv({n_rows});
    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    const Tensor& gv = gain.value();
    const Tensor& sv = shift.value();
    HYT_CHECK_SHAPE(gv.size() == d && sv.size() == d, "layer_norm affine must be [d]");
    for (int64_t r = 0; r < n_rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv(r) = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        for (int64_t j = 0; j < d; ++j) {
            xhat(r * d + j) = (row[j] - mean) * inv(r);
            out(r * d + j) = xhat(r * d + j) * gv(j) + sv(j);
        }
    }
    int32_t id = t->push(std::move(out), {x.id, gain.id, shift.id},
                         [inv = std::move(inv), xhat = std::move(xhat)](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& gv = t.node(ps[1]).value;
        const int64_t d = gv.size();
        const int64_t n_rows = g.size() / d;
        if (wants(t, ps[0])) {
            Tensor& gx = t.grad_acc(ps[0]);
            for (int64_t r = 0; r < n_rows; ++r) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    const double dxh = g(r * d + j) * gv(j);
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat(r * d + j);
                }
                for (int64_t j = 0; j < d; ++j) {
                    const double dxh = g(r * d + j) * gv(j);
                    gx(r * d + j) += inv(r) * (dxh - sum_dxhat / d -
                                               xhat(r * d + j) * sum_dxhat_xhat / d);
                }
            }
        }
        if (wants(t, ps[1])) {
            Tensor& gg = t.grad_acc(ps[1]);
            for (int64_t r = 0; r < n_rows; ++r)
                for (int64_t j = 0; j < d; ++j) gg(j) += g(r * d + j) * xhat(r * d + j);
        }
        if (wants(t, ps[2])) {
            Tensor& gs = t.grad_acc(ps[2]);
            for (int64_t r = 0; r < n_rows; ++r)
                for (int64_t j = 0; j < d; ++j) gs(j) += g(r * d + j);
        }
    });
    return Var{t, id};
}

Var l2norm_rows(Var x) {
    Tape* t = x.tape;
    const Tensor& xv = x.value();
    const int64_t L = xv.rows(), d = xv.cols();
    constexpr double kFloor = 1e-12;
    Tensor norms({L});
    Tensor out(xv.shape());
    for (int64_t r = 0; r < L; ++r) {
        double n2 = 0.0;
        for (int64_t j = 0; j < d; ++j) n2 += xv(r, j) * xv(r, j);
        norms(r) = std::max(std::sqrt(n2), kFloor);
        for (int64_t j = 0; j < d; ++j) out(r, j) = xv(r, j) / norms(r);
    }
    int32_t id = t->push(std::move(out), {x.id},
                         [norms = std::move(norms)](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).value;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gx = t.grad_acc(p);
        const int64_t L = y.rows(), d = y.cols();
        for (int64_t r = 0; r < L; ++r) {
            const bool clamped = norms(r) <= kFloor;
            double ydotg = 0.0;
            for (int64_t j = 0; j < d; ++j) ydotg += y(r, j) * g(r, j);
            for (int64_t j = 0; j < d; ++j) {
                gx(r, j) += clamped ? g(r, j) / norms(r)
                                    : (g(r, j) - y(r, j) * ydotg) / norms(r);
            }
        }
    });
    return Var{t, id};
}

Var causal_mean(Var x) {
    Tape* t = x.tape;
    const Tensor& xv = x.value();
    const int64_t L = xv.rows(), d = xv.cols();
    Tensor out({L, d});
    std::vector<double> acc(static_cast<size_t>(d), 0.0);
    for (int64_t r = 0; r < L; ++r) {
        for (int64_t j = 0; j < d; ++j) {
            acc[static_cast<size_t>(j)] += xv(r, j);
            out(r, j) = acc[static_cast<size_t>(j)] / static_cast<double>(r + 1);
        }
    }
    int32_t id = t->push(std::move(out), {x.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gx = t.grad_acc(p);
        const int64_t L = g.rows(), d = g.cols();
        std::vector<double> suffix(static_cast<size_t>(d), 0.0);
        for (int64_t r = L - 1; r >= 0; --r) {
            for (int64_t j = 0; j < d; ++j) {
                suffix[static_cast<size_t>(j)] += g(r, j) / static_cast<double>(r + 1);
                gx(r, j) += suffix[static_cast<size_t>(j)];
            }
        }
    });
    return Var{t, id};
}

Var rowdot(Var a, Var b) {
    Tape* t = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    HYT_CHECK_SHAPE(av.same_shape(bv) && av.ndim() == 2, "rowdot shape mismatch");
    const int64_t L = av.rows(), d = av.cols();
    Tensor out({L});
    for (int64_t r = 0; r < L; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) acc += av(r, j) * bv(r, j);
        out(r) = acc;
    }
    int32_t id = t->push(std::move(out), {a.id, b.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& av = t.node(ps[0]).value;
        const Tensor& bv = t.node(ps[1]).value;
        const int64_t L = av.rows(), d = av.cols();
        if (wants(t, ps[0])) {
            Tensor& ga = t.grad_acc(ps[0]);
            for (int64_t r = 0; r < L; ++r)
                for (int64_t j = 0; j < d; ++j) ga(r, j) += g(r) * bv(r, j);
        }
        if (wants(t, ps[1])) {
            Tensor& gb = t.grad_acc(ps[1]);
            for (int64_t r = 0; r < L; ++r)
                for (int64_t j = 0; j < d; ++j) gb(r, j) += g(r) * av(r, j);
        }
    });
    return Var{t, id};
}

Var colscale(Var x, Var s) {
    Tape* t = common_tape(x, s);
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    HYT_CHECK_SHAPE(xv.ndim() == 2 && sv.ndim() == 1 && sv.dim(0) == xv.rows(),
                    "colscale wants x [L x d], s [L]");
    const int64_t L = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    for (int64_t r = 0; r < L; ++r)
        for (int64_t j = 0; j < d; ++j) out(r, j) = xv(r, j) * sv(r);
    int32_t id = t->push(std::move(out), {x.id, s.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& xv = t.node(ps[0]).value;
        const Tensor& sv = t.node(ps[1]).value;
        const int64_t L = xv.rows(), d = xv.cols();
        if (wants(t, ps[0])) {
            Tensor& gx = t.grad_acc(ps[0]);
            for (int64_t r = 0; r < L; ++r)
                for (int64_t j = 0; j < d; ++j) gx(r, j) += g(r, j) * sv(r);
        }
        if (wants(t, ps[1])) {
            Tensor& gs = t.grad_acc(ps[1]);
            for (int64_t r = 0; r < L; ++r) {
                double acc = 0.0;
                for (int64_t j = 0; j < d; ++j) acc += g(r, j) * xv(r, j);
                gs(r) += acc;
            }
        }
    });
    return Var{t, id};
}

Var broadcast_col(Var s, int64_t d) {
    Tape* t = s.tape;
    const Tensor& sv = s.value();
    HYT_CHECK_SHAPE(sv.ndim() == 1, "broadcast_col wants [L]");
    const int64_t L = sv.dim(0);
    Tensor out({L, d});
    for (int64_t r = 0; r < L; ++r)
        for (int64_t j = 0; j < d; ++j) out(r, j) = sv(r);
    int32_t id = t->push(std::move(out), {s.id}, [](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gs = t.grad_acc(p);
        for (int64_t r = 0; r < g.rows(); ++r) {
            double acc = 0.0;
            for (int64_t j = 0; j < g.cols(); ++j) acc += g(r, j);
            gs(r) += acc;
        }
    });
    return Var{t, id};
}

Var concat_cols(const std::vector<Var>& xs) {
    HYT_CHECK(Error, !xs.empty(), "concat_cols of nothing");
    Tape* t = xs.front().tape;
    const int64_t L = xs.front().value().rows();
    int64_t total = 0;
    std::vector<int32_t> parents;
    std::vector<int64_t> widths;
    for (const Var& x : xs) {
        HYT_CHECK(Error, x.tape == t, "concat vars must share one tape");
        HYT_CHECK_SHAPE(x.value().ndim() == 2 && x.value().rows() == L,
                        "concat_cols rows disagree");
        widths.push_back(x.value().cols());
        total += x.value().cols();
        parents.push_back(x.id);
    }
    Tensor out({L, total});
    int64_t off = 0;
    for (const Var& x : xs) {
        const Tensor& xv = x.value();
        for (int64_t r = 0; r < L; ++r)
            for (int64_t j = 0; j < xv.cols(); ++j) out(r, off + j) = xv(r, j);
        off += xv.cols();
    }
    int32_t id = t->push(std::move(out), std::move(parents),
                         [widths = std::move(widths)](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        int64_t off = 0;
        for (size_t i = 0; i < ps.size(); ++i) {
            const int64_t w = widths[i];
            if (wants(t, ps[i])) {
                Tensor& gx = t.grad_acc(ps[i]);
                for (int64_t r = 0; r < g.rows(); ++r)
                    for (int64_t j = 0; j < w; ++j) gx(r, j) += g(r, off + j);
            }
            off += w;
        }
    });
    return Var{t, id};
}

Var slice_cols(Var x, int64_t c0, int64_t c1) {
    Tape* t = x.tape;
    const Tensor& xv = x.value();
    HYT_CHECK_SHAPE(xv.ndim() == 2 && c0 >= 0 && c0 < c1 && c1 <= xv.cols(),
                    "slice_cols range invalid");
    const int64_t L = xv.rows(), w = c1 - c0;
    Tensor out({L, w});
    for (int64_t r = 0; r < L; ++r)
        for (int64_t j = 0; j < w; ++j) out(r, j) = xv(r, c0 + j);
    int32_t id = t->push(std::move(out), {x.id}, [c0](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gx = t.grad_acc(p);
        for (int64_t r = 0; r < g.rows(); ++r)
            for (int64_t j = 0; j < g.cols(); ++j) gx(r, c0 + j) += g(r, j);
    });
    return Var{t, id};
}

Var slice_rows(Var x, int64_t r0, int64_t r1) {
    Tape* t = x.tape;
    const Tensor& xv = x.value();
    HYT_CHECK_SHAPE(xv.ndim() == 2 && r0 >= 0 && r0 < r1 && r1 <= xv.rows(),
                    "slice_rows range invalid");
    const int64_t w = xv.cols();
    Tensor out({r1 - r0, w});
    for (int64_t r = r0; r < r1; ++r)
        for (int64_t j = 0; j < w; ++j) out(r - r0, j) = xv(r, j);
    int32_t id = t->push(std::move(out), {x.id}, [r0](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gx = t.grad_acc(p);
        for (int64_t r = 0; r < g.rows(); ++r)
            for (int64_t j = 0; j < g.cols(); ++j) gx(r0 + r, j) += g(r, j);
    });
    return Var{t, id};
}

Var embedding_rows(Var table, const std::vector<int64_t>& ids) {
    Tape* t = table.tape;
    const Tensor& tv = table.value();
    HYT_CHECK_SHAPE(tv.ndim() == 2, "embedding table must be 2-d");
    const int64_t d = tv.cols();
    Tensor out({static_cast<int64_t>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r) {
        HYT_CHECK_DATA(ids[r] >= 0 && ids[r] < tv.rows(), "item id ", ids[r],
                       " outside vocabulary of ", tv.rows());
        for (int64_t j = 0; j < d; ++j) out(static_cast<int64_t>(r), j) = tv(ids[r], j);
    }
    int32_t id = t->push(std::move(out), {table.id}, [ids](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        Tensor& gt = t.grad_acc(p);
        const int64_t d = g.cols();
        for (size_t r = 0; r < ids.size(); ++r)
            for (int64_t j = 0; j < d; ++j) gt(ids[r], j) += g(static_cast<int64_t>(r), j);
    });
    return Var{t, id};
}

Var softmax_attention_causal(Var q, Var k, Var v) {
    Tape* t = common_tape(q, k);
    HYT_CHECK(Error, v.tape == t, "vars must share one tape");
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    HYT_CHECK_SHAPE(qv.same_shape(kv) && kv.same_shape(vv) && qv.ndim() == 2,
                    "attention inputs must share [L x d]");
    const int64_t L = qv.rows(), d = qv.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    // Streamed forward; weights recomputed per row in backward.
    Tensor out({L, d});
    std::vector<double> w(static_cast<size_t>(L));
    for (int64_t tpos = 0; tpos < L; ++tpos) {
        const double* q_row = qv.data() + tpos * d;
        double max_s = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i <= tpos; ++i) {
            const double* k_row = kv.data() + i * d;
            double s = 0.0;
            for (int64_t j = 0; j < d; ++j) s += q_row[j] * k_row[j];
            w[static_cast<size_t>(i)] = s * scale;
            max_s = std::max(max_s, s * scale);
        }
        double denom = 0.0;
        for (int64_t i = 0; i <= tpos; ++i) {
            w[static_cast<size_t>(i)] = std::exp(w[static_cast<size_t>(i)] - max_s);
            denom += w[static_cast<size_t>(i)];
        }
        double* out_row = out.data() + tpos * d;
        for (int64_t i = 0; i <= tpos; ++i) {
            const double weight = w[static_cast<size_t>(i)] / denom;
            const double* v_row = vv.data() + i * d;
            for (int64_t j = 0; j < d; ++j) out_row[j] += weight * v_row[j];
        }
    }
    out.ensure_finite("softmax_attention");

    int32_t id = t->push(std::move(out), {q.id, k.id, v.id}, [scale](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& qv = t.node(ps[0]).value;
        const Tensor& kv = t.node(ps[1]).value;
        const Tensor& vv = t.node(ps[2]).value;
        const int64_t L = qv.rows(), d = qv.cols();
        const bool want_q = wants(t, ps[0]), want_k = wants(t, ps[1]), want_v = wants(t, ps[2]);
        Tensor* gq = want_q ? &t.grad_acc(ps[0]) : nullptr;
        Tensor* gk = want_k ? &t.grad_acc(ps[1]) : nullptr;
        Tensor* gv = want_v ? &t.grad_acc(ps[2]) : nullptr;
        std::vector<double> w(static_cast<size_t>(L)), dw(static_cast<size_t>(L));
        for (int64_t tpos = 0; tpos < L; ++tpos) {
            const double* q_row = qv.data() + tpos * d;
            double max_s = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i <= tpos; ++i) {
                const double* k_row = kv.data() + i * d;
                double s = 0.0;
                for (int64_t j = 0; j < d; ++j) s += q_row[j] * k_row[j];
                w[static_cast<size_t>(i)] = s * scale;
                max_s = std::max(max_s, s * scale);
            }
            double denom = 0.0;
            for (int64_t i = 0; i <= tpos; ++i) {
                w[static_cast<size_t>(i)] = std::exp(w[static_cast<size_t>(i)] - max_s);
                denom += w[static_cast<size_t>(i)];
            }
            const double* g_row = g.data() + tpos * d;
            double dot_wdw = 0.0;
            for (int64_t i = 0; i <= tpos; ++i) {
                w[static_cast<size_t>(i)] /= denom;
                const double* v_row = vv.data() + i * d;
                double dwi = 0.0;
                for (int64_t j = 0; j < d; ++j) dwi += g_row[j] * v_row[j];
                dw[static_cast<size_t>(i)] = dwi;
                dot_wdw += w[static_cast<size_t>(i)] * dwi;
            }
            for (int64_t i = 0; i <= tpos; ++i) {
                const double wi = w[static_cast<size_t>(i)];
                const double ds = wi * (dw[static_cast<size_t>(i)] - dot_wdw) * scale;
                const double* k_row = kv.data() + i * d;
                if (want_q) {
                    double* gq_row = gq->data() + tpos * d;
                    for (int64_t j = 0; j < d; ++j) gq_row[j] += ds * k_row[j];
                }
                if (want_k) {
                    double* gk_row = gk->data() + i * d;
                    for (int64_t j = 0; j < d; ++j) gk_row[j] += ds * q_row[j];
                }
                if (want_v) {
                    double* gv_row = gv->data() + i * d;
                    for (int64_t j = 0; j < d; ++j) gv_row[j] += wi * g_row[j];
                }
            }
        }
    });
    return Var{t, id};
}

Var linear_attention_causal(Var q_feat, Var k_feat, Var v) {
    Tape* t = common_tape(q_feat, k_feat);
    HYT_CHECK(Error, v.tape == t, "vars must share one tape");
    const Tensor& pv = q_feat.value();
    const Tensor& kv = k_feat.value();
    const Tensor& vv = v.value();
    HYT_CHECK_SHAPE(pv.same_shape(kv) && kv.same_shape(vv) && pv.ndim() == 2,
                    "linear attention inputs must share [L x d]");
    const int64_t L = pv.rows(), d = pv.cols();

    Tensor out({L, d});
    Tensor denom({L});
    {
        Tensor key_sum({d});
        Tensor kvmat({d, d});
        for (int64_t tpos = 0; tpos < L; ++tpos) {
            const double* k_row = kv.data() + tpos * d;
            const double* v_row = vv.data() + tpos * d;
            for (int64_t a = 0; a < d; ++a) {
                key_sum(a) += k_row[a];
                double* kv_row = kvmat.data() + a * d;
                for (int64_t b = 0; b < d; ++b) kv_row[b] += v_row[a] * k_row[b];
            }
            const double* p_row = pv.data() + tpos * d;
            double r = 0.0;
            for (int64_t a = 0; a < d; ++a) r += p_row[a] * key_sum(a);
            denom(tpos) = std::max(r, kLinearAttentionNormFloor);
            double* out_row = out.data() + tpos * d;
            for (int64_t a = 0; a < d; ++a) {
                const double* kv_row = kvmat.data() + a * d;
                double acc = 0.0;
                for (int64_t b = 0; b < d; ++b) acc += kv_row[b] * p_row[b];
                out_row[a] = acc / denom(tpos);
            }
        }
    }
    out.ensure_finite("linear_attention");

    int32_t id = t->push(std::move(out), {q_feat.id, k_feat.id, v.id},
                         [denom = std::move(denom)](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& o = t.node(self).value;
        const auto& ps = t.node(self).parents;
        const Tensor& pv = t.node(ps[0]).value;
        const Tensor& kv = t.node(ps[1]).value;
        const Tensor& vv = t.node(ps[2]).value;
        const int64_t L = pv.rows(), d = pv.cols();
        const bool want_p = wants(t, ps[0]), want_k = wants(t, ps[1]), want_v = wants(t, ps[2]);

        // Pass 1 forward: rebuild prefix state, produce dp and the pieces
        // needed for the suffix pass.
        Tensor dn({L, d});
        Tensor dr({L});
        {
            Tensor key_sum({d});
            Tensor kvmat({d, d});
            Tensor* gp = want_p ? &t.grad_acc(ps[0]) : nullptr;
            for (int64_t tpos = 0; tpos < L; ++tpos) {
                const double* k_row = kv.data() + tpos * d;
                const double* v_row = vv.data() + tpos * d;
                for (int64_t a = 0; a < d; ++a) {
                    key_sum(a) += k_row[a];
                    double* kv_row = kvmat.data() + a * d;
                    for (int64_t b = 0; b < d; ++b) kv_row[b] += v_row[a] * k_row[b];
                }
                const double* g_row = g.data() + tpos * d;
                const double* o_row = o.data() + tpos * d;
                const double* p_row = pv.data() + tpos * d;
                const double r = denom(tpos);
                double go = 0.0;
                for (int64_t a = 0; a < d; ++a) go += g_row[a] * o_row[a];
                // Clamped rows have zero derivative through the normalizer.
                double raw = 0.0;
                for (int64_t a = 0; a < d; ++a) raw += p_row[a] * key_sum(a);
                const bool clamped = raw < kLinearAttentionNormFloor;
                dr(tpos) = clamped ? 0.0 : -go / r;
                double* dn_row = dn.data() + tpos * d;
                for (int64_t a = 0; a < d; ++a) dn_row[a] = g_row[a] / r;
                if (want_p) {
                    double* gp_row = gp->data() + tpos * d;
                    for (int64_t b = 0; b < d; ++b) {
                        double acc = dr(tpos) * key_sum(b);
                        for (int64_t a = 0; a < d; ++a) acc += kvmat(a, b) * dn_row[a];
                        gp_row[b] += acc;
                    }
                }
            }
        }
        // Pass 2 reverse: suffix sums distribute dA and dz onto k and v.
        if (want_k || want_v) {
            Tensor abar({d, d});
            Tensor zbar({d});
            Tensor* gk = want_k ? &t.grad_acc(ps[1]) : nullptr;
            Tensor* gvv = want_v ? &t.grad_acc(ps[2]) : nullptr;
            for (int64_t tpos = L - 1; tpos >= 0; --tpos) {
                const double* p_row = pv.data() + tpos * d;
                const double* dn_row = dn.data() + tpos * d;
                for (int64_t a = 0; a < d; ++a) {
                    double* abar_row = abar.data() + a * d;
                    for (int64_t b = 0; b < d; ++b) abar_row[b] += dn_row[a] * p_row[b];
                }
                for (int64_t b = 0; b < d; ++b) zbar(b) += dr(tpos) * p_row[b];
                const double* k_row = kv.data() + tpos * d;
                const double* v_row = vv.data() + tpos * d;
                if (want_v) {
                    double* gv_row = gvv->data() + tpos * d;
                    for (int64_t a = 0; a < d; ++a) {
                        const double* abar_row = abar.data() + a * d;
                        double acc = 0.0;
                        for (int64_t b = 0; b < d; ++b) acc += abar_row[b] * k_row[b];
                        gv_row[a] += acc;
                    }
                }
                if (want_k) {
                    double* gk_row = gk->data() + tpos * d;
                    for (int64_t b = 0; b < d; ++b) {
                        double acc = zbar(b);
                        for (int64_t a = 0; a < d; ++a) acc += abar(a, b) * v_row[a];
                        gk_row[b] += acc;
                    }
                }
            }
        }
    });
    return Var{t, id};
}

Var tadn_scan(Var q, Var k, Var v, Var beta, Var gate) {
    Tape* t = common_tape(q, k);
    HYT_CHECK(Error, v.tape == t && beta.tape == t && gate.tape == t,
              "vars must share one tape");
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    const Tensor& bv = beta.value();
    const Tensor& gv = gate.value();
    HYT_CHECK_SHAPE(qv.same_shape(kv) && kv.same_shape(vv) && qv.ndim() == 2,
                    "scan inputs must share [L x d]");
    const int64_t L = qv.rows(), d = qv.cols();
    HYT_CHECK_SHAPE(bv.ndim() == 1 && bv.dim(0) == L && gv.ndim() == 1 && gv.dim(0) == L,
                    "beta and gate must be [L]");

    // States are needed by the reverse-time adjoint; save all of them when
    // recording.
    const bool keep_states = t->recording();
    std::vector<Tensor> states;
    if (keep_states) states.reserve(static_cast<size_t>(L) + 1);

    Tensor out({L, d});
    Tensor state({d, d});
    if (keep_states) states.push_back(state);
    std::vector<double> sk(static_cast<size_t>(d));
    for (int64_t tpos = 0; tpos < L; ++tpos) {
        const double* k_row = kv.data() + tpos * d;
        const double* v_row = vv.data() + tpos * d;
        const double* q_row = qv.data() + tpos * d;
        const double b = bv(tpos);
        const double c = gv(tpos) * b;
        for (int64_t a = 0; a < d; ++a) {
            const double* s_row = state.data() + a * d;
            double acc = 0.0;
            for (int64_t j = 0; j < d; ++j) acc += s_row[j] * k_row[j];
            sk[static_cast<size_t>(a)] = acc;
        }
        for (int64_t a = 0; a < d; ++a) {
            double* s_row = state.data() + a * d;
            const double delta = b * v_row[a] - c * sk[static_cast<size_t>(a)];
            for (int64_t j = 0; j < d; ++j) s_row[j] += delta * k_row[j];
        }
        double* out_row = out.data() + tpos * d;
        for (int64_t a = 0; a < d; ++a) {
            const double* s_row = state.data() + a * d;
            double acc = 0.0;
            for (int64_t j = 0; j < d; ++j) acc += s_row[j] * q_row[j];
            out_row[a] = acc;
        }
        if (keep_states) states.push_back(state);
    }
    out.ensure_finite("tadn_scan");

    int32_t id = t->push(std::move(out), {q.id, k.id, v.id, beta.id, gate.id},
                         [states = std::move(states)](Tape& t, int32_t self) {
        const Tensor& g = t.node(self).grad;
        const auto& ps = t.node(self).parents;
        const Tensor& qv = t.node(ps[0]).value;
        const Tensor& kv = t.node(ps[1]).value;
        const Tensor& vv = t.node(ps[2]).value;
        const Tensor& bv = t.node(ps[3]).value;
        const Tensor& gv = t.node(ps[4]).value;
        const int64_t L = qv.rows(), d = qv.cols();
        Tensor* gq = wants(t, ps[0]) ? &t.grad_acc(ps[0]) : nullptr;
        Tensor* gk = wants(t, ps[1]) ? &t.grad_acc(ps[1]) : nullptr;
        Tensor* gvv = wants(t, ps[2]) ? &t.grad_acc(ps[2]) : nullptr;
        Tensor* gb = wants(t, ps[3]) ? &t.grad_acc(ps[3]) : nullptr;
        Tensor* gg = wants(t, ps[4]) ? &t.grad_acc(ps[4]) : nullptr;

        Tensor ds({d, d});
        std::vector<double> u(static_cast<size_t>(d)), w(static_cast<size_t>(d));
        std::vector<double> stw(static_cast<size_t>(d)), dsu(static_cast<size_t>(d));
        for (int64_t tpos = L - 1; tpos >= 0; --tpos) {
            const Tensor& s_t = states[static_cast<size_t>(tpos) + 1];
            const Tensor& s_prev = states[static_cast<size_t>(tpos)];
            const double* q_row = qv.data() + tpos * d;
            const double* k_row = kv.data() + tpos * d;
            const double* v_row = vv.data() + tpos * d;
            const double* g_row = g.data() + tpos * d;
            const double b = bv(tpos);
            const double gate_t = gv(tpos);
            const double c = gate_t * b;

            // o_t = S_t q_t
            for (int64_t a = 0; a < d; ++a) {
                double* ds_row = ds.data() + a * d;
                const double ga = g_row[a];
                for (int64_t j = 0; j < d; ++j) ds_row[j] += ga * q_row[j];
            }
            if (gq) {
                double* gq_row = gq->data() + tpos * d;
                for (int64_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int64_t a = 0; a < d; ++a) acc += s_t(a, j) * g_row[a];
                    gq_row[j] += acc;
                }
            }

            // u = S_{t-1} k,  w = dS k,  S_{t-1}' w,  dS' u
            for (int64_t a = 0; a < d; ++a) {
                const double* sp_row = s_prev.data() + a * d;
                const double* ds_row = ds.data() + a * d;
                double au = 0.0, aw = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    au += sp_row[j] * k_row[j];
                    aw += ds_row[j] * k_row[j];
                }
                u[static_cast<size_t>(a)] = au;
                w[static_cast<size_t>(a)] = aw;
            }
            for (int64_t j = 0; j < d; ++j) {
                double a_stw = 0.0, a_dsu = 0.0;
                for (int64_t a = 0; a < d; ++a) {
                    a_stw += s_prev(a, j) * w[static_cast<size_t>(a)];
                    a_dsu += ds(a, j) * u[static_cast<size_t>(a)];
                }
                stw[static_cast<size_t>(j)] = a_stw;
                dsu[static_cast<size_t>(j)] = a_dsu;
            }

            double uw = 0.0, vw = 0.0;
            for (int64_t a = 0; a < d; ++a) {
                uw += u[static_cast<size_t>(a)] * w[static_cast<size_t>(a)];
                vw += v_row[a] * w[static_cast<size_t>(a)];
            }
            const double dc = -uw;
            if (gb) (*gb)(tpos) += vw + gate_t * dc;
            if (gg) (*gg)(tpos) += b * dc;
            if (gvv) {
                double* gv_row = gvv->data() + tpos * d;
                for (int64_t a = 0; a < d; ++a) gv_row[a] += b * w[static_cast<size_t>(a)];
            }
            if (gk) {
                double* gk_row = gk->data() + tpos * d;
                for (int64_t j = 0; j < d; ++j) {
                    gk_row[j] += -c * (stw[static_cast<size_t>(j)] + dsu[static_cast<size_t>(j)]);
                    double dsj_v = 0.0;
                    for (int64_t a = 0; a < d; ++a) dsj_v += ds(a, j) * v_row[a];
                    gk_row[j] += b * dsj_v;
                }
            }

            // dS_{t-1} = dS (I - c k k') = dS - c w k'
            for (int64_t a = 0; a < d; ++a) {
                double* ds_row = ds.data() + a * d;
                const double cw = c * w[static_cast<size_t>(a)];
                for (int64_t j = 0; j < d; ++j) ds_row[j] -= cw * k_row[j];
            }
        }
    });
    return Var{t, id};
}

Var cross_entropy(Var logits, int64_t target) {
    Tape* t = logits.tape;
    const Tensor& lv = logits.value();
    HYT_CHECK_SHAPE(lv.ndim() == 2 && lv.rows() == 1, "cross_entropy wants [1 x V] logits");
    const int64_t V = lv.cols();
    HYT_CHECK_DATA(target >= 0 && target < V, "target ", target, " outside vocabulary of ", V);
    double max_l = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < V; ++j) max_l = std::max(max_l, lv(0, j));
    double sum = 0.0;
    for (int64_t j = 0; j < V; ++j) sum += std::exp(lv(0, j) - max_l);
    const double lse = max_l + std::log(sum);
    Tensor out = Tensor::scalar(lse - lv(0, target));
    out.ensure_finite("cross_entropy");
    int32_t id = t->push(std::move(out), {logits.id}, [target, lse](Tape& t, int32_t self) {
        const double g = t.node(self).grad(0);
        int32_t p = t.node(self).parents[0];
        if (!wants(t, p)) return;
        const Tensor& lv = t.node(p).value;
        Tensor& gl = t.grad_acc(p);
        for (int64_t j = 0; j < lv.cols(); ++j) {
            const double soft = std::exp(lv(0, j) - lse);
            gl(0, j) += g * (soft - (j == target ? 1.0 : 0.0));
        }
    });
    return Var{t, id};
}

}  // namespace hytrec::ad
