#pragma once

#include <cstdint>

#include "semseg/net.hpp"

namespace semseg {

// EMA teacher. t is the 1-based index of the next update.
struct TeacherState {
    ParameterVector params;
    int64_t t = 1;
    double alpha = 0.999;
};

// Teacher weight update:
//   if 1 - 1/t < alpha:  theta' = (1 - 1/t) * theta' + (1/t) * theta   (running average)
//   else:                theta' = alpha * theta' + (1 - alpha) * theta
// The branch predicate is evaluated exactly as written; for alpha = 0.999 the
// EMA branch first fires at t = 1000. Increments t.
void ema_update(TeacherState& state, const ParameterVector& student);

}  // namespace semseg
