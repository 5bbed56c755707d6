#include "nfembed/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace nfembed {
namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  return loss(tape).value()[0];
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, std::span<Parameter* const> params, double eps) {
  std::vector<bool> trainable;
  for (Parameter* p : params) {
    trainable.push_back(p->trainable);
    p->trainable = true;
    p->zero_grad();
  }
  {
    Tape tape;
    tape.backward(loss(tape));
  }

  GradCheckResult result;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate(loss);
      p->value[i] = saved - eps;
      const double down = evaluate(loss);
      p->value[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p->name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->trainable = trainable[i];
  return result;
}

}  // namespace nfembed
