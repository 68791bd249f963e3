#include "progdet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace progdet {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape;
  const double v = f(tape).value()(0, 0);
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite objective");
  return v;
}

}  // namespace

double grad_check(const ScalarFn& f, std::span<Param* const> params,
                  const GradCheckOptions& options) {
  std::vector<Tensor2> analytic;
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
    for (const Param* p : params) analytic.push_back(tape.grad(*p));
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& slot = p.value.data()[i];
      const double saved = slot;
      slot = saved + options.step;
      const double up = evaluate(f);
      slot = saved - options.step;
      const double down = evaluate(f);
      slot = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace progdet
