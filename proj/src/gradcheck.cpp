#include "hytrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hytrec {

double gradcheck_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_loss(const LossBuilder& build_loss) {
    ad::Tape tape(/*recording=*/false);
    ad::Var loss = build_loss(tape);
    return loss.value()(0);
}

}  // namespace

std::vector<GradCheckResult> gradient_check(const std::vector<Parameter*>& params,
                                            const LossBuilder& build_loss, double fd_step,
                                            double tolerance,
                                            const std::string& corrupt_group) {
    for (Parameter* p : params) p->zero_grad();
    {
        ad::Tape tape(/*recording=*/true);
        ad::Var loss = build_loss(tape);
        tape.backward(loss);
    }

    std::vector<GradCheckResult> results;
    results.reserve(params.size());
    for (Parameter* p : params) {
        GradCheckResult r{p->name, 0.0, p->value.size(), true};
        const bool corrupted = p->name == corrupt_group;
        for (int64_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value(i);
            p->value(i) = saved + fd_step;
            const double up = eval_loss(build_loss);
            p->value(i) = saved - fd_step;
            const double down = eval_loss(build_loss);
            p->value(i) = saved;
            const double numeric = (up - down) / (2.0 * fd_step);
            const double analytic = p->grad(i) + (corrupted ? 1.0 : 0.0);
            r.max_rel_err = std::max(r.max_rel_err, gradcheck_rel_err(analytic, numeric));
        }
        r.pass = r.max_rel_err <= tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

bool all_pass(const std::vector<GradCheckResult>& results) {
    for (const auto& r : results) {
        if (!r.pass) return false;
    }
    return true;
}

}  // namespace hytrec
