#include "avsd/embeddings.hpp"

#include "avsd/error.hpp"

namespace avsd {

namespace {

template <typename T>
std::vector<Var<T>> embedded_tokens(Var<T> table, std::span<const int> ids) {
  std::vector<Var<T>> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(ops::lookup(table, id));
  return out;
}

}  // namespace

template <typename T>
QuestionEmbedding<T> embed_question(Graph<T>& g, Var<T> word_table, const LstmLayer& lstm,
                                    std::span<const int> ids, const Dropout& dropout) {
  AVSD_REQUIRE(!ids.empty(), "embed_question: empty question");
  const auto inputs = embedded_tokens(word_table, ids);
  auto states = lstm.run<T>(g, inputs);
  for (auto& h : states) h = dropout(h);
  QuestionEmbedding<T> q;
  q.final = states.back();
  q.states = ops::stack_rows<T>(states);
  return q;
}

template <typename T>
Var<T> embed_history(Graph<T>& g, Var<T> word_table, std::span<const LstmLayer> pair_layers,
                     const LstmLayer& history, std::span<const std::span<const int>> pairs,
                     const Dropout& dropout) {
  AVSD_REQUIRE(!pair_layers.empty(), "embed_history: no pair layers");
  if (pairs.empty()) return zeros(g, history.hidden);
  std::vector<Var<T>> summaries;
  summaries.reserve(pairs.size());
  for (const auto& ids : pairs) {
    if (ids.empty()) {
      summaries.push_back(zeros(g, pair_layers.back().hidden));
      continue;
    }
    auto seq = embedded_tokens(word_table, ids);
    for (std::size_t l = 0; l < pair_layers.size(); ++l) {
      seq = pair_layers[l].run<T>(g, seq);
      for (auto& h : seq) h = dropout(h);
    }
    summaries.push_back(seq.back());
  }
  LstmState<T> last;
  history.run<T>(g, summaries, nullptr, &last);
  return dropout(last.h);
}

template <typename T>
Var<T> embed_video(Graph<T>& g, const Linear& conv, Var<T> frames) {
  const auto& s = frames.shape();
  AVSD_REQUIRE(s.size() == 2 && s[1] == conv.in,
               "embed_video: expected [F*n_V x " + std::to_string(conv.in) + "], got " +
                   shape_string(s));
  return conv(g, frames);
}

template <typename T>
Var<T> embed_audio(Graph<T>& g, const Linear& conv, Var<T> audio) {
  AVSD_REQUIRE(audio.shape().size() == 2 && audio.shape()[1] == conv.in,
               "embed_audio: expected [n_A x " + std::to_string(conv.in) + "], got " +
                   shape_string(audio.shape()));
  return conv(g, audio);
}

#define AVSD_INSTANTIATE_EMBEDDINGS(T)                                                         \
  template QuestionEmbedding<T> embed_question(Graph<T>&, Var<T>, const LstmLayer&,            \
                                               std::span<const int>, const Dropout&);          \
  template Var<T> embed_history(Graph<T>&, Var<T>, std::span<const LstmLayer>,                 \
                                const LstmLayer&, std::span<const std::span<const int>>,       \
                                const Dropout&);                                               \
  template Var<T> embed_video(Graph<T>&, const Linear&, Var<T>);                               \
  template Var<T> embed_audio(Graph<T>&, const Linear&, Var<T>);

AVSD_INSTANTIATE_EMBEDDINGS(float)
AVSD_INSTANTIATE_EMBEDDINGS(double)

}  // namespace avsd
