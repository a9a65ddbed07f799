#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace avsd {

enum class FusionMode {
  kAudVisLstm,            // Aud-Vis LSTM over (a_A, a_V1..a_VF) -> (h0, c0); a_T at every step
  kVidAudLstm,            // same, frames first and audio last
  kQuestionFirstState,    // text joins the Aud-Vis LSTM as its first input; no a_T at the steps
  kAllFirstState,         // all attended vectors -> linear -> (h0, c0); no per-step context
  kAllConcatInput,        // zero initial state; every attended vector at every step
  kTextAudioConcatInput,  // Aud-Vis LSTM over frames only; a_T and a_A at every step
};

enum class InitScheme { kDefault, kXavier, kHe };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);
std::string to_string(InitScheme scheme);
InitScheme init_scheme_from_string(const std::string& name);

struct ModelConfig {
  // Modalities: the question is always present.
  bool use_history = true;
  bool use_video = true;
  bool use_audio = true;
  bool attention = true;
  bool share_frame_weights = false;
  bool question_prior = true;
  bool video_prior = true;
  bool audio_prior = false;
  FusionMode fusion = FusionMode::kAudVisLstm;

  std::size_t frames = 4;            // F
  std::size_t video_positions = 49;  // n_V
  std::size_t video_channels = 512;  // input channels of a frame cell
  std::size_t audio_channels = 128;  // input channels of an audio step
  std::size_t video_dim = 512;       // d_V
  std::size_t audio_dim = 128;       // d_A
  std::size_t word_dim = 128;
  std::size_t question_dim = 256;    // d_Q
  std::size_t history_dim = 128;     // d_H
  std::size_t history_pair_layers = 2;
  std::size_t attention_dim = 512;   // d_att
  std::size_t pair_dim = 512;        // d_pair
  std::size_t question_prior_len = 32;
  std::size_t audio_prior_len = 32;
  std::size_t encoder_dim = 512;     // d_enc
  std::size_t answer_dim = 256;
  double dropout = 0.5;

  /// Width of a_T.
  std::size_t text_dim() const { return question_dim + (use_history ? history_dim : 0); }
  /// Number of attended modalities |D|.
  std::size_t modality_count() const {
    return 1 + (use_audio ? 1 : 0) + (use_video ? frames : 0);
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 2;
  InitScheme init = InitScheme::kHe;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;  // 0 disables clipping
  /// Stop once the epoch's mean training loss falls below this (0 disables).
  double target_train_loss = 0.0;
  std::size_t min_count = 2;
  std::size_t threads = 0;  // 0: AVSD_THREADS or 1
};

struct DecodeConfig {
  std::size_t beam_width = 3;
  std::size_t max_length = 20;
  bool length_normalize = false;
};

struct DataConfig {
  std::string train_dialogs;
  std::string val_dialogs;
  std::string test_dialogs;
  std::string video_dir;
  std::string audio_dir;
  std::string vocab;
  std::string checkpoint;
  std::string output_dir = "out";
  std::size_t max_history = 10;
};

struct RunConfig {
  std::string preset = "full";
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
};

/// Throws ContractError naming the offending field.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
/// Strict: unknown or mistyped fields raise ParseError naming the field path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Named ablation presets.
std::vector<std::string> preset_names();
/// Applies a preset to `config` (modalities, attention, sharing, fusion, ...).
void apply_preset(RunConfig& config, const std::string& name);

/// Applies `dotted.key=value` overrides; values parse as JSON when possible,
/// otherwise as strings.
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

/// Relative paths in `config.data` resolved against `base`.
void resolve_paths(RunConfig& config, const std::filesystem::path& base);

}  // namespace avsd
