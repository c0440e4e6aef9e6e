#include "semseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace semseg {

double poly_lr(double base_lr, int64_t t, int64_t total_steps) {
    if (total_steps <= 0) throw std::invalid_argument("poly_lr: total_steps must be positive");
    if (t < 0 || t >= total_steps) throw std::invalid_argument("poly_lr: step outside [0, T)");
    return base_lr * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total_steps), 0.9);
}

void sgd_step_fixed_lr(ParameterVector& params, const GradientVector& grad, OptimizerState& state,
                       double lr) {
    const size_t n = params.values.size();
    if (grad.values.size() != n || state.momentum.size() != n)
        throw std::invalid_argument("sgd_step: size mismatch");
    if (state.t >= state.total_steps)
        throw std::invalid_argument("sgd_step: step counter has reached the planned total");

    const double mom = state.momentum_coef;
    const double wd = state.weight_decay;
    double* p = params.values.data();
    const double* g = grad.values.data();
    double* v = state.momentum.data();
    for (size_t i = 0; i < n; ++i) {
        const double geff = g[i] + wd * p[i];
        v[i] = mom * v[i] + geff;
        p[i] -= lr * v[i];
    }
    state.t += 1;
}

void sgd_step(ParameterVector& params, const GradientVector& grad, OptimizerState& state,
              double base_lr) {
    if (state.t >= state.total_steps)
        throw std::invalid_argument("sgd_step: step counter has reached the planned total");
    sgd_step_fixed_lr(params, grad, state, poly_lr(base_lr, state.t, state.total_steps));
}

}  // namespace semseg
