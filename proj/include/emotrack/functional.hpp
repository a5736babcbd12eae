#pragma once

#include <span>
#include <vector>

namespace emotrack::num {

// Tape-free reference versions of the scalar building blocks. The tape ops in
// autodiff.hpp implement the same math; these are handy for checks and for
// callers that never need gradients.

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> v);

/// gamma * (x - mean) / sqrt(var + eps) + beta with population variance.
std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps);

/// 0.5 r^2 for |r| <= delta, delta (|r| - delta / 2) otherwise, r = pred - target.
double huber(double pred, double target, double delta);

/// d huber / d pred.
double huber_grad(double pred, double target, double delta);

double sigmoid(double x);

}  // namespace emotrack::num
