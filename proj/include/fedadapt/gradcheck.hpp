// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedadapt {

struct GradCheckResult {
    std::string op;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    int instances = 0;
    bool pass = false;
};

// Central finite differences (h = 1e-3) of a double-precision forward against
// the f32 backward rules. Relative error per tensor is
// max_i |analytic_i - fd_i| / (max(||analytic||_inf, ||fd||_inf) + 1e-12).
double gradcheck_conv2d(uint64_t seed);
double gradcheck_batch_norm(uint64_t seed, bool training);
double gradcheck_relu(uint64_t seed);
double gradcheck_linear(uint64_t seed);
double gradcheck_softmax_cross_entropy(uint64_t seed);
double gradcheck_add(uint64_t seed);
double gradcheck_global_avg_pool(uint64_t seed);

// Runs every differentiable op `instances_per_op` times with derived seeds.
// Tolerances: 1e-3 for batch norm, 1e-4 elsewhere.
std::vector<GradCheckResult> run_gradient_suite(int instances_per_op, uint64_t seed);

}  // namespace fedadapt
