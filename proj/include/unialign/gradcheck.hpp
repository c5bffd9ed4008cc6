#pragma once

#include <functional>

#include "unialign/tape.hpp"
#include "unialign/tensor.hpp"

namespace unialign {

// Builds a scalar loss on the tape from a single registered input leaf.
// Must be deterministic across calls: dropout in eval mode, or re-seeded
// inside the builder so every call replays the same mask.
using LossBuilder = std::function<int(Tape&, int x_id)>;

// Central-difference check of backward() against (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
// Returns the max relative error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const LossBuilder& f, const Tensor& x, double eps = 1e-5);

}  // namespace unialign
