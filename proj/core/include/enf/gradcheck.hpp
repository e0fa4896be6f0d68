#pragma once

#include <functional>
#include <span>
#include <vector>

#include "enf/tape.hpp"

namespace enf {

/// Builds a scalar loss on `tape` from the given parameter leaves.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  /// Largest relative error per parameter tensor.
  std::vector<double> max_rel_error;
  double max_error = 0.0;
  bool passed = false;
};

/// Compares tape gradients of `f` against central differences
/// (f(x+h) - f(x-h)) / 2h, element by element. Relative error is
/// |a - n| / max(|a|, |n|, 1e-12). Evaluation uses the dtype of the first
/// parameter. Throws OracleInvalidError if two evaluations at the same point
/// disagree.
GradCheckReport finite_difference_check(const LossBuilder& f, std::span<const Tensor> params,
                                        double h, double tol);

}  // namespace enf
