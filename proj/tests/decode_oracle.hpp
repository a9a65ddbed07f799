#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "avsd/decoder.hpp"
#include "avsd/model.hpp"

namespace avsd::fixtures {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
using Prefix = std::vector<int>;
using Dist = std::vector<double>;

struct Best {
  Prefix tokens;
  double score = kNegInf;
  bool found = false;
};

inline bool lex_before(const Prefix& a, const Prefix& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// Enumerates every finished sequence of at most max_len steps.
template <typename Dists>
void enumerate(const Dists& dist_of, Prefix prefix, double score, std::size_t depth,
               std::size_t max_len, Best& best) {
  if (depth == max_len) return;
  const Dist d = dist_of(prefix);
  for (std::size_t y = 0; y < d.size(); ++y) {
    if (!std::isfinite(d[y])) continue;
    const double s = score + d[y];
    if (int(y) == kEos) {
      Prefix key = prefix;
      key.push_back(kEos);
      Prefix best_key = best.tokens;
      best_key.push_back(kEos);
      if (!best.found || s > best.score || (s == best.score && lex_before(key, best_key))) {
        best = {prefix, s, true};
      }
      continue;
    }
    Prefix next = prefix;
    next.push_back(int(y));
    enumerate(dist_of, next, s, depth + 1, max_len, best);
  }
}

// Next-token log-probabilities of the model after `prefix`, recomputed from
// scratch by teacher forcing.
struct ModelDists {
  const AvsdModel<double>& model;
  const ExampleInput<double>& input;

  Dist operator()(const Prefix& prefix) const {
    Graph<double> g(&model.parameters());
    const auto enc = model.encode(g, input);
    LstmState<double> state = enc.initial;
    int prev = kSos;
    Var<double> logits;
    for (std::size_t i = 0; i <= prefix.size(); ++i) {
      auto s = model.step(g, enc, prev, state);
      logits = s.logits;
      state = s.state;
      if (i < prefix.size()) prev = prefix[i];
    }
    return masked_log_softmax(logits.value());
  }
};

}  // namespace avsd::fixtures
