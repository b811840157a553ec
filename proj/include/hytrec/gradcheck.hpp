#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hytrec/autodiff.hpp"

namespace hytrec {

struct GradCheckResult {
    std::string group;    // parameter name
    double max_rel_err;   // worst element in the group
    int64_t n_checked;
    bool pass;
};

// Builds the forward pass for the scalar loss under test. Called many
// times with perturbed parameter values; must read values from the
// Parameters each call.
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

// rel = |analytic - numeric| / max(|analytic|, |numeric|, 1).
double gradcheck_rel_err(double analytic, double numeric);

// Central finite differences against the tape gradient, every element of
// every listed parameter. `corrupt_group` is a fault-injection hook for
// tests: the named group's analytic gradient gets an offset so the check
// must flag exactly that group.
std::vector<GradCheckResult> gradient_check(const std::vector<Parameter*>& params,
                                            const LossBuilder& build_loss,
                                            double fd_step = 1e-5, double tolerance = 1e-4,
                                            const std::string& corrupt_group = "");

bool all_pass(const std::vector<GradCheckResult>& results);

}  // namespace hytrec
