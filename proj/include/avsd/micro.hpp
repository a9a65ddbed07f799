#pragma once

#include <random>

#include "avsd/model.hpp"

namespace avsd::micro {

/// Every width at most 8, two frames. Used by grad-check.
inline ModelConfig micro_config() {
  ModelConfig c;
  c.frames = 2;
  c.video_positions = 3;
  c.video_channels = 4;
  c.audio_channels = 3;
  c.video_dim = 4;
  c.audio_dim = 3;
  c.word_dim = 5;
  c.question_dim = 6;
  c.history_dim = 4;
  c.history_pair_layers = 2;
  c.attention_dim = 4;
  c.pair_dim = 3;
  c.question_prior_len = 4;
  c.audio_prior = true;
  c.audio_prior_len = 3;
  c.encoder_dim = 5;
  c.answer_dim = 6;
  c.dropout = 0.0;
  return c;
}

template <typename T>
void randomize(ParameterSet<T>& params, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& p : params)
    for (auto& x : p.value.values()) x = T(d(rng));
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& x : t.values()) x = T(d(rng));
  return t;
}

// One turn with two history pairs and one padded audio row.
template <typename T>
ExampleInput<T> micro_example(const ModelConfig& c, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(kNumReserved, int(vocab) - 1);
  ExampleInput<T> in;
  in.question = {word(rng), word(rng), word(rng)};
  in.history = {{word(rng), word(rng)}, {word(rng), word(rng), word(rng)}};
  in.video = random_tensor<T>({c.frames * c.video_positions, c.video_channels}, rng);
  in.audio = random_tensor<T>({4, c.audio_channels}, rng);
  in.audio_mask = {1, 1, 1, 0};
  const int a = word(rng), b = word(rng);
  in.answer_input = {kSos, a, b};
  in.answer_target = {a, b, kEos};
  return in;
}

}  // namespace avsd::micro
