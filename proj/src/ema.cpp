#include "semseg/ema.hpp"

#include <stdexcept>

namespace semseg {

void ema_update(TeacherState& state, const ParameterVector& student) {
    if (!(state.alpha > 0.0 && state.alpha < 1.0))
        throw std::invalid_argument("ema_update: alpha must lie in (0, 1)");
    if (state.params.values.size() != student.values.size())
        throw std::invalid_argument("ema_update: parameter layout mismatch");
    if (state.t < 1) throw std::invalid_argument("ema_update: iteration counter must be >= 1");

    const double t = static_cast<double>(state.t);
    double keep, take;
    if (1.0 - 1.0 / t < state.alpha) {
        keep = 1.0 - 1.0 / t;  // running absolute average
        take = 1.0 / t;
    } else {
        keep = state.alpha;
        take = 1.0 - state.alpha;
    }
    double* th = state.params.values.data();
    const double* st = student.values.data();
    for (size_t i = 0; i < state.params.values.size(); ++i) th[i] = keep * th[i] + take * st[i];
    state.t += 1;
}

}  // namespace semseg
