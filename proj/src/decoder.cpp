#include "avsd/decoder.hpp"

namespace avsd {

template <typename T>
LstmState<T> encode_audio_visual(Graph<T>& g, const LstmLayer& lstm,
                                 std::span<const Var<T>> sources,
                                 std::span<const Linear* const> projections) {
  AVSD_REQUIRE(sources.size() == projections.size(),
               "encode_audio_visual: one projection per source required");
  std::vector<Var<T>> inputs;
  inputs.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    AVSD_REQUIRE(projections[i]->out == lstm.in,
                 "encode_audio_visual: projection width does not match the LSTM input");
    inputs.push_back((*projections[i])(g, sources[i]));
  }
  LstmState<T> state = lstm.zero_state(g);
  lstm.run<T>(g, inputs, &state, &state);
  return state;
}

Mask output_mask(std::size_t vocab_size) {
  Mask m(vocab_size, 1);
  if (vocab_size > std::size_t(kPad)) m[kPad] = 0;
  if (vocab_size > std::size_t(kSos)) m[kSos] = 0;
  return m;
}

template <typename T>
DecoderStep<T> decode_step(Graph<T>& g, Var<T> word_table, const LstmLayer& lstm,
                           const Linear& output, int prev, const LstmState<T>& state,
                           std::span<const Var<T>> context, const Dropout& dropout) {
  const std::size_t vocab = word_table.shape()[0];
  AVSD_REQUIRE(prev >= 0 && std::size_t(prev) < vocab && prev != kPad,
               "decode_step: invalid previous token " + std::to_string(prev));
  std::vector<Var<T>> parts{ops::lookup(word_table, prev)};
  parts.insert(parts.end(), context.begin(), context.end());
  Var<T> input = parts.size() == 1 ? parts[0] : ops::concat<T>(parts);
  AVSD_REQUIRE(input.size() == lstm.in, "decode_step: input width " +
                                            std::to_string(input.size()) +
                                            " does not match the answer LSTM");
  DecoderStep<T> s;
  s.state = ops::lstm_cell(input, state, lstm.bind(g));
  s.logits = output(g, dropout(s.state.h));
  return s;
}

template <typename T>
std::vector<double> masked_log_softmax(const Tensor<T>& logits) {
  const auto mask = output_mask(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, double(logits[i]));
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) z += std::exp(double(logits[i]) - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) out[i] = double(logits[i]) - log_z;
  return out;
}

#define AVSD_INSTANTIATE_DECODER(T)                                                           \
  template LstmState<T> encode_audio_visual(Graph<T>&, const LstmLayer&,                      \
                                            std::span<const Var<T>>,                          \
                                            std::span<const Linear* const>);                  \
  template DecoderStep<T> decode_step(Graph<T>&, Var<T>, const LstmLayer&, const Linear&, int, \
                                      const LstmState<T>&, std::span<const Var<T>>,           \
                                      const Dropout&);                                        \
  template std::vector<double> masked_log_softmax(const Tensor<T>&);

AVSD_INSTANTIATE_DECODER(float)
AVSD_INSTANTIATE_DECODER(double)

}  // namespace avsd
