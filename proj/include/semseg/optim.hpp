#pragma once

#include <cstdint>
#include <vector>

#include "semseg/net.hpp"

namespace semseg {

struct OptimizerState {
    std::vector<double> momentum;  // same layout as the parameter vector
    int64_t t = 0;                 // steps taken so far
    int64_t total_steps = 0;       // planned steps T
    double momentum_coef = 0.9;
    double weight_decay = 5e-4;

    OptimizerState() = default;
    OptimizerState(size_t param_count, int64_t total, double mom = 0.9, double wd = 5e-4)
        : momentum(param_count, 0.0), total_steps(total), momentum_coef(mom), weight_decay(wd) {}
};

// Polynomial schedule: base_lr * (1 - t/T)^0.9, monotone nonincreasing in t.
double poly_lr(double base_lr, int64_t t, int64_t total_steps);

// Momentum SGD with additive weight decay on the gradient:
//   g' = grad + wd * theta;  v = mom * v + g';  theta -= lr(t) * v
// Increments the step counter. Throws if t >= T or sizes mismatch.
void sgd_step(ParameterVector& params, const GradientVector& grad, OptimizerState& state,
              double base_lr);

// Same update with an explicit learning rate (self-generation ablation with a
// pinned schedule); sgd_step delegates here after evaluating poly_lr.
void sgd_step_fixed_lr(ParameterVector& params, const GradientVector& grad, OptimizerState& state,
                       double lr);

}  // namespace semseg
