#include "avsd/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace avsd {

namespace {

double evaluate(const LossBuilder& loss, const ParameterSet<double>& params) {
  Graph<double> g(&params);
  Var<double> l = loss(g);
  AVSD_REQUIRE(l.value().size() == 1, "grad_check: loss must be scalar");
  return l.value()[0];
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, ParameterSet<double>& params,
                           double epsilon,
                           std::optional<std::size_t> max_entries_per_parameter,
                           double floor) {
  Gradients<double> analytic(params);
  {
    Graph<double> g(&params);
    Var<double> l = loss(g);
    g.backward(l, analytic);
  }

  GradCheckResult result;
  for (std::size_t id = 0; id < params.size(); ++id) {
    auto& values = params[id].value.storage();
    std::size_t stride = 1;
    if (max_entries_per_parameter && values.size() > *max_entries_per_parameter)
      stride = (values.size() + *max_entries_per_parameter - 1) / *max_entries_per_parameter;
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double hi = values[i];
      const double up = evaluate(loss, params);
      values[i] = saved - epsilon;
      const double lo = values[i];
      const double down = evaluate(loss, params);
      values[i] = saved;

      const double numeric = (up - down) / (hi - lo);
      const double exact = analytic[id][i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      const double rel = std::abs(exact - numeric) / denom;
      ++result.checked;
      result.max_abs_error = std::max(result.max_abs_error, std::abs(exact - numeric));
      if (rel > result.max_relative_error || result.worst_parameter.empty()) {
        if (rel >= result.max_relative_error) {
          result.max_relative_error = rel;
          result.worst_parameter = params[id].name;
          result.worst_index = i;
          result.worst_analytic = exact;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace avsd
