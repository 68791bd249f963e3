#pragma once

#include <functional>
#include <span>

#include "progdet/tensor.hpp"

namespace progdet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
};

/// Scalar-valued computation recorded on a fresh tape.
using ScalarFn = std::function<Var(Tape&)>;

/// Maximum relative error between reverse-mode gradients and central finite
/// differences over every entry of every parameter. Parameter values are
/// restored afterwards. Throws NonFiniteError on non-finite evaluations.
double grad_check(const ScalarFn& f, std::span<Param* const> params,
                  const GradCheckOptions& options = {});

}  // namespace progdet
