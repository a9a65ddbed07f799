#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "avsd/autodiff.hpp"

namespace avsd {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// Builds a fresh graph, returns the scalar loss node. Must be deterministic.
using LossBuilder = std::function<Var<double>(Graph<double>&)>;

/// Compares reverse-mode gradients of `loss` with central finite differences
/// of step `epsilon`, parameter by parameter. The relative error of one entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor), floor 1e-8 by
/// default. At step 1e-5 the difference quotient carries about 1e-11 of
/// round-off, so entries far below 1e-7 cannot be resolved to 1e-4.
///
/// `max_entries_per_parameter` bounds the cost on large tensors; entries are
/// then taken at an even stride.
GradCheckResult grad_check(const LossBuilder& loss, ParameterSet<double>& params,
                           double epsilon = 1e-5,
                           std::optional<std::size_t> max_entries_per_parameter = {},
                           double floor = 1e-8);

}  // namespace avsd
