#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsd/attention.hpp"
#include "avsd/batch.hpp"
#include "avsd/config.hpp"
#include "avsd/decoder.hpp"
#include "avsd/embeddings.hpp"

namespace avsd {

/// Inputs of one dialog turn, unbatched.
template <typename T>
struct ExampleInput {
  std::vector<int> question;
  std::vector<std::vector<int>> history;
  Tensor<T> video;  // sampled frames stacked as rows, [F*n_V x C_V]
  Tensor<T> audio;  // [n_A x C_A]; padded rows are masked out
  Mask audio_mask;  // empty: all rows valid
  std::vector<int> answer_input;   // SOS w1 .. wn
  std::vector<int> answer_target;  // w1 .. wn EOS
};

template <typename T>
ExampleInput<T> example_from_batch(const Batch& batch, std::size_t b);

/// Everything the answer decoder conditions on.
template <typename T>
struct Encoded {
  std::vector<ModalityAttended<T>> attended;  // layout order; empty without attention
  Var<T> a_Q, r_H, a_T, a_A;
  std::vector<Var<T>> a_V;
  LstmState<T> initial;          // (h0, c0)
  std::vector<Var<T>> context;   // appended to the word embedding at every step
  std::size_t encoder_steps = 0; // Aud-Vis LSTM steps taken
};

enum class Reduction { kMean, kSum };

/// Cross-entropy of each target under its step logits (PAD/SOS masked from
/// the output), over the positions with mask 1. Throws when every position is
/// masked.
template <typename T>
Var<T> sequence_loss(std::span<const Var<T>> logits, std::span<const int> targets,
                     MaskView positions = {}, Reduction reduction = Reduction::kMean);

/// The full answer generator: embeddings, factor-graph attention, Aud-Vis LSTM
/// and answer LSTM.
template <typename T>
class AvsdModel {
 public:
  AvsdModel(const ModelConfig& config, std::size_t vocab_size);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }
  /// Attention layout, absent in the attention-free baseline.
  const std::optional<AttentionLayout>& attention() const noexcept { return attention_; }
  std::size_t decoder_input_dim() const noexcept { return answer_lstm_.in; }

  Encoded<T> encode(Graph<T>& g, const ExampleInput<T>& input, const Dropout& dropout = {}) const;
  DecoderStep<T> step(Graph<T>& g, const Encoded<T>& enc, int prev, const LstmState<T>& state,
                      const Dropout& dropout = {}) const;

  /// Teacher-forced cross-entropy over the answer tokens; `tokens` receives
  /// the number of scored positions.
  Var<T> example_loss(Graph<T>& g, const ExampleInput<T>& input, const Dropout& dropout = {},
                      Reduction reduction = Reduction::kMean) const;

  /// Beam search (greedy when width is 1); optionally exports attention maps.
  Hypothesis generate(const ExampleInput<T>& input, const BeamOptions& options,
                      nlohmann::json* attention_maps = nullptr) const;

  /// Step function for the generic decoders over an encoded example.
  auto stepper(Graph<T>& g, const Encoded<T>& enc) const {
    return [this, &g, &enc](int prev, const LstmState<T>& state) {
      auto s = step(g, enc, prev, state);
      return std::pair{masked_log_softmax(s.logits.value()), s.state};
    };
  }

  /// Trainable scalars per top-level module (embeddings, attention, decoder)
  /// and per component.
  std::map<std::string, std::size_t> parameter_breakdown(bool by_component = false) const;

 private:
  ModelConfig config_;
  std::size_t vocab_size_;
  ParameterSet<T> params_;
  ParamId word_table_ = 0;
  LstmLayer question_lstm_;
  std::vector<LstmLayer> pair_lstms_;
  LstmLayer history_lstm_;
  Linear video_conv_, audio_conv_;
  std::optional<AttentionLayout> attention_;
  std::optional<std::size_t> audio_slot_, question_slot_, first_frame_slot_;
  Linear proj_audio_, proj_video_, proj_text_;
  LstmLayer audvis_lstm_;
  Linear state_init_;
  LstmLayer answer_lstm_;
  Linear output_;

  enum class Source { kAudio, kVideo, kText };
  std::vector<Source> encoder_sources() const;
  std::vector<Source> context_sources() const;
};

extern template class AvsdModel<float>;
extern template class AvsdModel<double>;

}  // namespace avsd
