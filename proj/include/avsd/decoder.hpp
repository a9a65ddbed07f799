#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "avsd/error.hpp"
#include "avsd/layers.hpp"
#include "avsd/text.hpp"

namespace avsd {

/// Feeds the sources in order through `lstm`, each after its own projection
/// to the LSTM input width. Returns the final (h, c).
template <typename T>
LstmState<T> encode_audio_visual(Graph<T>& g, const LstmLayer& lstm,
                                 std::span<const Var<T>> sources,
                                 std::span<const Linear* const> projections);

/// Output mask of the answer vocabulary: PAD and SOS are never emitted.
Mask output_mask(std::size_t vocab_size);

template <typename T>
struct DecoderStep {
  Var<T> logits;  // [|V|], unmasked
  LstmState<T> state;
};

/// One step of the answer LSTM: input [embed(prev) ; context...], LSTM,
/// dropout, FC to the vocabulary. Throws ContractError on an invalid token.
template <typename T>
DecoderStep<T> decode_step(Graph<T>& g, Var<T> word_table, const LstmLayer& lstm,
                           const Linear& output, int prev, const LstmState<T>& state,
                           std::span<const Var<T>> context, const Dropout& dropout = {});

/// Log-probabilities of a logits vector under the output mask (masked
/// entries are -inf).
template <typename T>
std::vector<double> masked_log_softmax(const Tensor<T>& logits);

struct Hypothesis {
  std::vector<int> tokens;  // without SOS/EOS
  double log_prob = 0.0;
  bool finished = false;
};

struct BeamOptions {
  std::size_t width = 3;
  std::size_t max_length = 20;  // decoding steps; EOS counts as one
  bool length_normalize = false;
};

namespace detail {

inline bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

inline double ranked_score(const Hypothesis& h, bool normalize) {
  if (!normalize) return h.log_prob;
  const std::size_t n = h.tokens.size() + (h.finished ? 1 : 0);
  return n == 0 ? h.log_prob : h.log_prob / static_cast<double>(n);
}

/// Higher score first; ties go to the lexicographically smaller sequence
/// (EOS is part of the sequence of finished hypotheses).
inline bool better(const Hypothesis& a, const Hypothesis& b, bool normalize) {
  const double sa = ranked_score(a, normalize), sb = ranked_score(b, normalize);
  if (sa != sb) return sa > sb;
  auto ka = a.tokens, kb = b.tokens;
  if (a.finished) ka.push_back(kEos);
  if (b.finished) kb.push_back(kEos);
  return lex_less(ka, kb);
}

}  // namespace detail

/// Beam search over a step function `step(prev_token, state) -> (log_probs,
/// next_state)`. Keeps exactly `width` live hypotheses; EOS expansions ranked
/// within the top `width` retire to the completed pool. Returns the best
/// completed hypothesis, else the best live one once max_length is reached.
template <typename State, typename StepFn>
Hypothesis beam_search(const State& initial, StepFn&& step, const BeamOptions& options) {
  AVSD_REQUIRE(options.width >= 1, "beam_search: width must be at least 1");
  struct Live {
    Hypothesis hyp;
    State state;
  };
  struct Candidate {
    Hypothesis hyp;
    std::size_t parent;
  };
  std::vector<Live> live{{Hypothesis{}, initial}};
  std::vector<Hypothesis> completed;
  const bool norm = options.length_normalize;
  auto best_of = [&](const std::vector<Hypothesis>& pool) {
    return *std::min_element(pool.begin(), pool.end(), [&](const auto& a, const auto& b) {
      return detail::better(a, b, norm);
    });
  };

  for (std::size_t t = 0; t < options.max_length && !live.empty(); ++t) {
    std::vector<Candidate> cands;
    std::vector<State> next_states;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const int prev = live[i].hyp.tokens.empty() ? kSos : live[i].hyp.tokens.back();
      auto [log_probs, next] = step(prev, live[i].state);
      next_states.push_back(std::move(next));
      for (std::size_t y = 0; y < log_probs.size(); ++y) {
        if (!std::isfinite(log_probs[y])) continue;
        Candidate c{live[i].hyp, i};
        c.hyp.log_prob += log_probs[y];
        if (static_cast<int>(y) == kEos)
          c.hyp.finished = true;
        else
          c.hyp.tokens.push_back(static_cast<int>(y));
        cands.push_back(std::move(c));
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      return detail::better(a.hyp, b.hyp, norm);
    });
    std::vector<Live> next_live;
    for (std::size_t r = 0; r < cands.size(); ++r) {
      if (cands[r].hyp.finished) {
        if (r < options.width) completed.push_back(cands[r].hyp);
      } else if (next_live.size() < options.width) {
        next_live.push_back({std::move(cands[r].hyp), next_states[cands[r].parent]});
      }
      if (next_live.size() == options.width && r + 1 >= options.width) break;
    }
    live = std::move(next_live);
    // Log-probabilities are <= 0, so no live extension can overtake.
    if (!norm && !completed.empty() && !live.empty()) {
      const double best_live =
          std::max_element(live.begin(), live.end(), [](const Live& a, const Live& b) {
            return a.hyp.log_prob < b.hyp.log_prob;
          })->hyp.log_prob;
      if (best_of(completed).log_prob >= best_live) break;
    }
  }
  if (!completed.empty()) return best_of(completed);
  std::vector<Hypothesis> rest;
  for (auto& l : live) rest.push_back(l.hyp);
  if (rest.empty()) return Hypothesis{};
  return best_of(rest);
}

/// Argmax at every step until EOS or max_length; ties go to the lower id.
template <typename State, typename StepFn>
Hypothesis greedy_decode(const State& initial, StepFn&& step, std::size_t max_length) {
  Hypothesis h;
  State state = initial;
  for (std::size_t t = 0; t < max_length; ++t) {
    const int prev = h.tokens.empty() ? kSos : h.tokens.back();
    auto [log_probs, next] = step(prev, state);
    std::size_t best = log_probs.size();
    for (std::size_t y = 0; y < log_probs.size(); ++y)
      if (std::isfinite(log_probs[y]) && (best == log_probs.size() || log_probs[y] > log_probs[best]))
        best = y;
    AVSD_REQUIRE(best < log_probs.size(), "greedy_decode: no finite log-probability");
    h.log_prob += log_probs[best];
    if (static_cast<int>(best) == kEos) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(static_cast<int>(best));
    state = std::move(next);
  }
  return h;
}

}  // namespace avsd
