#pragma once

// Gradient checks shared by the unit tests and the acceptance suite. Every
// suite draws its parameters from N(0, 0.1^2) and checks at eps = 1e-5.
// Regression-style losses against small targets keep the loss value near the
// size of its gradients, so central differences resolve every coordinate.

#include <cstdint>

#include "nfembed/numerics/gradcheck.hpp"

namespace nfembed::testing {

GradCheckResult p2a_gradients(std::uint64_t draw);
/// One conditioned cell step and the readout, from a random state; the
/// subject embedding is among the checked parameters.
GradCheckResult lstm_gradients(std::uint64_t draw);
GradCheckResult cnn_gradients(std::uint64_t draw);
/// Softmax head with cross entropy and weight decay.
GradCheckResult classifier_gradients(std::uint64_t draw);

}  // namespace nfembed::testing
