#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "nfembed/numerics/tape.hpp"

namespace nfembed {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 penalty: g += weight_decay * theta before the moment update.
  double weight_decay = 0.0;
};

struct SgdConfig {
  double lr = 1e-2;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

/// Per-parameter moment state plus step counter. Parameters are registered by
/// reference and must outlive the optimizer.
class Optimizer {
 public:
  static Optimizer adam(AdamConfig config = {});
  static Optimizer sgd(SgdConfig config);

  /// Register a parameter; `lr` overrides the base learning rate for it.
  void add(Parameter& p, std::optional<double> lr = std::nullopt);
  void add(std::span<Parameter* const> params, std::optional<double> lr = std::nullopt);

  /// Apply one update from each parameter's grad. Throws DimensionError if a
  /// grad does not match its parameter.
  void step();
  void zero_grad();

  std::size_t step_count() const noexcept { return steps_; }
  std::size_t size() const noexcept { return slots_.size(); }
  bool adaptive() const noexcept { return adaptive_; }

 private:
  struct Slot {
    Parameter* param;
    double lr;
    Tensor first;   // adaptive: first moment; plain: velocity
    Tensor second;  // adaptive only
  };

  bool adaptive_ = true;
  AdamConfig adam_{};
  SgdConfig sgd_{};
  std::vector<Slot> slots_;
  std::vector<double> scratch_;
  std::size_t steps_ = 0;
};

}  // namespace nfembed
