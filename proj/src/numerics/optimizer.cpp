#include "nfembed/numerics/optimizer.hpp"

#include <cmath>

#include "nfembed/errors.hpp"
#include "nfembed/simd/kernels.hpp"

namespace nfembed {

Optimizer Optimizer::adam(AdamConfig config) {
  Optimizer opt;
  opt.adaptive_ = true;
  opt.adam_ = config;
  return opt;
}

Optimizer Optimizer::sgd(SgdConfig config) {
  Optimizer opt;
  opt.adaptive_ = false;
  opt.sgd_ = config;
  return opt;
}

void Optimizer::add(Parameter& p, std::optional<double> lr) {
  const double base = adaptive_ ? adam_.lr : sgd_.lr;
  Slot slot{&p, lr.value_or(base), Tensor(p.value.shape()), Tensor{}};
  if (adaptive_) slot.second = Tensor(p.value.shape());
  slots_.push_back(std::move(slot));
}

void Optimizer::add(std::span<Parameter* const> params, std::optional<double> lr) {
  for (Parameter* p : params) add(*p, lr);
}

void Optimizer::zero_grad() {
  for (Slot& s : slots_) s.param->zero_grad();
}

void Optimizer::step() {
  for (const Slot& s : slots_)
    if (s.param->grad.shape() != s.param->value.shape())
      throw DimensionError("optimizer_step: " + s.param->name + " grad " + shape_string(s.param->grad.shape()) +
                           " vs value " + shape_string(s.param->value.shape()));
  ++steps_;
  const auto& k = simd::kernels();
  for (Slot& s : slots_) {
    Parameter& p = *s.param;
    const std::size_t n = p.value.size();
    const double decay = adaptive_ ? adam_.weight_decay : sgd_.weight_decay;
    const double* grad = p.grad.data();
    if (decay != 0.0) {
      scratch_.assign(p.grad.storage().begin(), p.grad.storage().end());
      k.axpy(n, decay, p.value.data(), scratch_.data());
      grad = scratch_.data();
    }
    if (adaptive_) {
      const double t = static_cast<double>(steps_);
      const simd::AdamCoeffs coeffs{s.lr,
                                    adam_.beta1,
                                    adam_.beta2,
                                    adam_.eps,
                                    1.0 - std::pow(adam_.beta1, t),
                                    1.0 - std::pow(adam_.beta2, t)};
      if (s.lr != 0.0) k.adam(n, p.value.data(), grad, s.first.data(), s.second.data(), coeffs);
    } else if (sgd_.momentum != 0.0) {
      // v = momentum * v + g;  theta -= lr * v
      for (std::size_t i = 0; i < n; ++i) s.first[i] = sgd_.momentum * s.first[i] + grad[i];
      k.axpy(n, -s.lr, s.first.data(), p.value.data());
    } else {
      k.axpy(n, -s.lr, grad, p.value.data());
    }
  }
}

}  // namespace nfembed
