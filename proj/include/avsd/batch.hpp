#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "avsd/dialog.hpp"
#include "avsd/ops.hpp"
#include "avsd/tensor.hpp"
#include "avsd/text.hpp"

namespace avsd {

enum class SampleMode { kTrain, kEval };

/// Picks `count` frame indices out of `total` stored frames.
///   eval:  floor((f + 0.5) * total / count)
///   train: floor(f * total / count) + one random phase in [0, ceil(total / count)),
///          clamped to total - 1
/// Indices are nondecreasing and repeat when total < count.
std::vector<std::size_t> sample_frames(std::size_t total, std::size_t count, SampleMode mode,
                                       std::uint64_t seed = 0);

/// Video/audio feature lookup by video id, backed by `<dir>/<id>.video.avsf`
/// and `<dir>/<id>.audio.avsf` files or by tensors registered in memory.
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(std::filesystem::path video_dir, std::filesystem::path audio_dir);

  static std::filesystem::path video_path(const std::filesystem::path& dir,
                                          const std::string& video_id);
  static std::filesystem::path audio_path(const std::filesystem::path& dir,
                                          const std::string& video_id);

  /// Registers in-memory features. Video is [frames x n_V x C] (or the on-disk
  /// [frames x 7 x 7 x 512]); audio is [steps x C], or empty for no audio.
  void put(const std::string& video_id, Tensor<float> video, Tensor<float> audio);

  const Tensor<float>& video(const std::string& video_id);
  const Tensor<float>& audio(const std::string& video_id);
  bool has(const std::string& video_id) const;

 private:
  std::filesystem::path video_dir_, audio_dir_;
  std::map<std::string, Tensor<float>> video_, audio_;
};

/// Row-per-example token matrix zero-padded (PAD = 0) to the longest row.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;

  std::span<const int> row(std::size_t r) const { return {ids.data() + r * cols, cols}; }
  std::span<const int> tokens(std::size_t r) const {
    return {ids.data() + r * cols, lengths[r]};
  }
  Mask mask(std::size_t r) const;
};

/// [batch x max_pairs x max_len] token ids of the question-answer history.
struct HistoryBatch {
  std::size_t batch = 0;
  std::size_t max_pairs = 0;
  std::size_t max_len = 0;
  std::vector<int> ids;
  std::vector<std::size_t> pair_lengths;  // [batch x max_pairs]
  std::vector<std::size_t> counts;        // pairs per example

  std::span<const int> tokens(std::size_t b, std::size_t t) const;
};

struct Batch {
  std::vector<std::string> video_ids;
  std::vector<std::size_t> turns;
  TokenBatch questions;
  HistoryBatch history;
  Tensor<float> video;  // [B x F x n_V x C_V]
  Tensor<float> audio;  // [B x n_A x C_A], n_A >= 1
  std::vector<std::size_t> audio_lengths;
  TokenBatch answer_inputs;   // SOS-prefixed
  TokenBatch answer_targets;  // EOS-suffixed

  std::size_t size() const noexcept { return video_ids.size(); }
  std::size_t frames() const { return video.dim(1); }
  Mask audio_mask(std::size_t b) const;
  /// Copies example b's sampled frames, [F x n_V x C_V].
  Tensor<float> video_of(std::size_t b) const;
  /// Copies example b's padded audio rows, [n_A x C_A].
  Tensor<float> audio_of(std::size_t b) const;
};

struct BatchOptions {
  std::size_t frames = 4;
  SampleMode mode = SampleMode::kEval;
  std::uint64_t seed = 0;
};

/// Tokenizes, pads and gathers features. Throws DataError naming the video id
/// when its features are missing.
Batch make_batch(std::span<const DialogExample> examples, const Vocabulary& vocab,
                 FeatureStore& features, const BatchOptions& options);

}  // namespace avsd
