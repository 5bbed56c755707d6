#include "gradient_suites.hpp"

#include "nfembed/pipeline/lstm.hpp"
#include "nfembed/pipeline/p2a.hpp"
#include "nfembed/prediction/baselines.hpp"
#include "nfembed/prediction/classifier.hpp"

namespace nfembed::testing {
namespace {

constexpr double kParamSd = 0.1;
constexpr double kEps = 1e-5;

void redraw(std::span<Parameter* const> params, Rng& rng) {
  for (Parameter* p : params)
    for (double& v : p->value.values()) v = rng.normal(0.0, kParamSd);
}

Tensor normal(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

Var half_sse(Var pred, const Tensor& target) {
  return ops::scale(ops::squared_l2(pred, pred.tape().constant_ref(target)), 0.5);
}

}  // namespace

GradCheckResult p2a_gradients(std::uint64_t draw) {
  Rng rng(derive_seed(0x9a2a, draw));
  P2ATranslator phi(4, 0.2, rng);
  auto params = phi.parameters();
  redraw(params, rng);
  // One wide-scale input row keeps the input path above the biases through
  // all eight layers.
  const Tensor x = normal({1, 4}, 1000.0, rng), y = normal({1, 4}, kParamSd, rng);
  return grad_check(
      [&](Tape& tape) {
        Rng unused(0);
        return half_sse(phi.forward(tape, tape.constant_ref(x), Mode::eval, unused), y);
      },
      params, kEps);
}

GradCheckResult lstm_gradients(std::uint64_t draw) {
  Rng rng(derive_seed(0x157a, draw));
  const std::size_t f = 3, hidden = 4, rows = 2;
  LstmPredictor model({f, hidden, 3, LstmVariant::conditioned}, rng);
  auto params = model.parameters();
  Parameter e("e", Tensor({rows, 3}));
  params.push_back(&e);
  redraw(params, rng);
  const Tensor x = normal({rows, 2 * f}, 3.0, rng), c = normal({rows, hidden}, 1.0, rng),
               y = normal({rows, f}, kParamSd, rng);
  Tensor h({rows, hidden});
  for (double& v : h.values()) v = rng.uniform(-1.0, 1.0);
  return grad_check(
      [&](Tape& tape) {
        const TapedStep s =
            model.step(tape, tape.constant_ref(x), tape.constant_ref(h), tape.constant_ref(c), tape.parameter(e));
        return half_sse(ops::affine(s.h, tape.parameter(model.readout_w()), tape.parameter(model.readout_b())), y);
      },
      params, kEps);
}

GradCheckResult cnn_gradients(std::uint64_t draw) {
  Rng rng(derive_seed(0xc22, draw));
  const Volume vol{3, 3, 3};
  const std::size_t subjects = 2, frames = 2;
  const std::vector<TraitTargets> targets{{Trait::stai, 5, {0, 3}}, {Trait::nf_experience, 3, {2, 1}}};
  CnnConfig cfg;
  cfg.filters = 2;
  cfg.hidden1 = 4;
  cfg.hidden2 = 3;
  FmriCnn model(vol, frames, targets, cfg, rng);
  auto params = model.parameters();
  redraw(params, rng);
  const Tensor x = normal({subjects * frames, vol.voxels()}, 20.0, rng);
  std::vector<Tensor> y;
  for (const auto& t : targets) y.push_back(normal({subjects, t.classes}, kParamSd, rng));
  return grad_check(
      [&](Tape& tape) {
        const Var z = model.pooled(tape, x);
        Var total;
        for (std::size_t h = 0; h < model.heads(); ++h) {
          const Var l = half_sse(model.logits(tape, z, h), y[h]);
          total = total.valid() ? ops::add(total, l) : l;
        }
        return total;
      },
      params, kEps);
}

GradCheckResult classifier_gradients(std::uint64_t draw) {
  Rng rng(derive_seed(0xc1a5, draw));
  Parameter w("w", normal({5, 12}, kParamSd, rng)), b("b", normal({5}, kParamSd, rng));
  const Tensor x = normal({4, 12}, 1.0, rng);
  std::vector<int> y;
  for (int i = 0; i < 4; ++i) y.push_back(static_cast<int>(rng.index(5)));
  std::vector<Parameter*> params{&w, &b};
  return grad_check([&](Tape& tape) { return head_loss(tape.parameter(w), tape.parameter(b), x, y, 1e-3); }, params,
                    kEps);
}

}  // namespace nfembed::testing
