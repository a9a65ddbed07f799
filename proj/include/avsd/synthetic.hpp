#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsd/tensor.hpp"

namespace avsd {

/// Planted-signal fixture. Every video carries a color, a count and a sound
/// class; each class lights a constant block of feature channels:
///   video, every frame, one spatial cell: channels [8c, 8c + 8)          color c
///   video, every frame, another cell:     channels [256 + 8k, 264 + 8k)  count k
///   audio, every step:                    channels [8s, 8s + 8)          sound s
/// Background is U(0, 0.1). Each dialog asks about its classes, one question per
/// turn, and the answer names the class, so answers are a function of the
/// features. The word inventory is sized so the vocabulary built with
/// min_count 2 has exactly `vocab_size` entries when the dialog count allows.
struct SyntheticVideo {
  std::string video_id;
  int color = 0;
  int count = 0;
  int sound = 0;
  std::size_t color_cell = 0;
  std::size_t count_cell = 0;
  Tensor<float> video;  // [frames x 7 x 7 x 512]
  Tensor<float> audio;  // [steps x 128]
};

struct SyntheticDataset {
  nlohmann::json dialogs;  // dialog JSON document
  std::vector<SyntheticVideo> videos;
  std::vector<std::string> color_words, count_words, sound_words;
};

struct SyntheticOptions {
  std::size_t min_frames = 4;
  std::size_t max_frames = 8;
  std::size_t min_audio_steps = 3;
  std::size_t max_audio_steps = 10;
};

SyntheticDataset make_synthetic(std::uint64_t seed, std::size_t n_dialogs, std::size_t vocab_size,
                                const SyntheticOptions& options = {});

/// Writes `dir/dialogs.json`, `dir/video/<id>.video.avsf` and
/// `dir/audio/<id>.audio.avsf`.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

}  // namespace avsd
