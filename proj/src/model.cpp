#include "avsd/model.hpp"

#include <algorithm>

#include "avsd/error.hpp"

namespace avsd {

template <typename T>
ExampleInput<T> example_from_batch(const Batch& batch, std::size_t b) {
  AVSD_REQUIRE(b < batch.size(), "example_from_batch: index out of range");
  ExampleInput<T> in;
  auto q = batch.questions.tokens(b);
  in.question.assign(q.begin(), q.end());
  for (std::size_t t = 0; t < batch.history.counts[b]; ++t) {
    auto h = batch.history.tokens(b, t);
    in.history.emplace_back(h.begin(), h.end());
  }
  auto video = batch.video_of(b);
  const std::size_t channels = video.dim(2);
  in.video = video.reshaped({video.dim(0) * video.dim(1), channels}).template cast<T>();
  in.audio = batch.audio_of(b).template cast<T>();
  in.audio_mask = batch.audio_mask(b);
  auto ai = batch.answer_inputs.tokens(b);
  auto at = batch.answer_targets.tokens(b);
  in.answer_input.assign(ai.begin(), ai.end());
  in.answer_target.assign(at.begin(), at.end());
  return in;
}

template <typename T>
Var<T> sequence_loss(std::span<const Var<T>> logits, std::span<const int> targets,
                     MaskView positions, Reduction reduction) {
  AVSD_REQUIRE(logits.size() == targets.size(), "sequence_loss: one target per step required");
  AVSD_REQUIRE(positions.empty() || positions.size() == targets.size(),
               "sequence_loss: mask length mismatch");
  std::vector<Var<T>> terms;
  Mask out_mask;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!positions.empty() && !positions[i]) continue;
    if (out_mask.size() != logits[i].size()) out_mask = output_mask(logits[i].size());
    AVSD_REQUIRE(targets[i] >= 0 && std::size_t(targets[i]) < logits[i].size() &&
                     out_mask[std::size_t(targets[i])],
                 "sequence_loss: invalid target token " + std::to_string(targets[i]));
    terms.push_back(ops::cross_entropy(logits[i], std::size_t(targets[i]), MaskView(out_mask)));
  }
  AVSD_REQUIRE(!terms.empty(), "sequence_loss: every position is masked");
  Var<T> total = terms.size() == 1 ? terms[0] : ops::sum(ops::concat<T>(terms));
  if (reduction == Reduction::kSum) return total;
  return ops::scale(total, T(1) / T(terms.size()));
}

template <typename T>
AvsdModel<T>::AvsdModel(const ModelConfig& config, std::size_t vocab_size)
    : config_(config), vocab_size_(vocab_size) {
  const auto& c = config_;
  AVSD_REQUIRE(vocab_size > std::size_t(kNumReserved), "model needs at least one corpus word");
  RunConfig check;
  check.model = c;
  validate(check);

  word_table_ = params_.add("embeddings.word_table", {vocab_size, c.word_dim},
                            ParamKind::kEmbedding, c.word_dim, c.word_dim);
  question_lstm_ = LstmLayer::create(params_, "embeddings.question_lstm", c.word_dim,
                                     c.question_dim);
  if (c.use_history) {
    for (std::size_t l = 0; l < c.history_pair_layers; ++l)
      pair_lstms_.push_back(LstmLayer::create(params_,
                                              "embeddings.history_pair_lstm" + std::to_string(l),
                                              l == 0 ? c.word_dim : c.history_dim,
                                              c.history_dim));
    history_lstm_ =
        LstmLayer::create(params_, "embeddings.history_lstm", c.history_dim, c.history_dim);
  }
  if (c.use_video)
    video_conv_ = Linear::create(params_, "embeddings.video_conv", c.video_channels, c.video_dim);
  if (c.use_audio)
    audio_conv_ = Linear::create(params_, "embeddings.audio_conv", c.audio_channels, c.audio_dim);

  if (c.attention) {
    std::vector<ModalitySpec> specs;
    if (c.use_audio) {
      audio_slot_ = specs.size();
      specs.push_back({"audio", c.audio_dim, c.audio_prior ? c.audio_prior_len : 0, ""});
    }
    question_slot_ = specs.size();
    specs.push_back({"question", c.question_dim, c.question_prior ? c.question_prior_len : 0, ""});
    if (c.use_video) {
      first_frame_slot_ = specs.size();
      for (std::size_t f = 0; f < c.frames; ++f)
        specs.push_back({"frame" + std::to_string(f), c.video_dim,
                         c.video_prior ? c.video_positions : 0,
                         c.share_frame_weights ? "frames" : ""});
    }
    attention_ = AttentionLayout::create(params_, "attention", std::move(specs),
                                         c.attention_dim, c.pair_dim);
  }

  const auto enc = encoder_sources();
  const auto ctx = context_sources();
  auto uses = [](const std::vector<Source>& v, Source s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  if (c.fusion == FusionMode::kAllFirstState) {
    std::size_t width = c.text_dim();
    if (c.use_audio) width += c.audio_dim;
    if (c.use_video) width += c.frames * c.video_dim;
    state_init_ = Linear::create(params_, "decoder.state_init", width, 2 * c.answer_dim);
  } else if (!enc.empty()) {
    if (uses(enc, Source::kText))
      proj_text_ = Linear::create(params_, "decoder.text_projection", c.text_dim(), c.encoder_dim);
    if (uses(enc, Source::kAudio))
      proj_audio_ =
          Linear::create(params_, "decoder.audio_projection", c.audio_dim, c.encoder_dim);
    if (uses(enc, Source::kVideo))
      proj_video_ =
          Linear::create(params_, "decoder.video_projection", c.video_dim, c.encoder_dim);
    audvis_lstm_ = LstmLayer::create(params_, "decoder.audvis_lstm", c.encoder_dim, c.answer_dim);
  }
  std::size_t input = c.word_dim;
  for (auto s : ctx)
    input += s == Source::kText ? c.text_dim()
             : s == Source::kAudio ? c.audio_dim
                                   : c.frames * c.video_dim;
  answer_lstm_ = LstmLayer::create(params_, "decoder.answer_lstm", input, c.answer_dim);
  output_ = Linear::create(params_, "decoder.output", c.answer_dim, vocab_size);
}

template <typename T>
auto AvsdModel<T>::encoder_sources() const -> std::vector<Source> {
  std::vector<Source> s;
  const auto& c = config_;
  auto push = [&](Source src) {
    if ((src == Source::kAudio && !c.use_audio) || (src == Source::kVideo && !c.use_video)) return;
    s.push_back(src);
  };
  switch (c.fusion) {
    case FusionMode::kAudVisLstm: push(Source::kAudio); push(Source::kVideo); break;
    case FusionMode::kVidAudLstm: push(Source::kVideo); push(Source::kAudio); break;
    case FusionMode::kQuestionFirstState:
      push(Source::kText); push(Source::kAudio); push(Source::kVideo); break;
    case FusionMode::kAllFirstState: case FusionMode::kAllConcatInput: break;
    case FusionMode::kTextAudioConcatInput: push(Source::kVideo); break;
  }
  return s;
}

template <typename T>
auto AvsdModel<T>::context_sources() const -> std::vector<Source> {
  const auto& c = config_;
  std::vector<Source> s;
  switch (c.fusion) {
    case FusionMode::kAudVisLstm: case FusionMode::kVidAudLstm: s = {Source::kText}; break;
    case FusionMode::kQuestionFirstState: case FusionMode::kAllFirstState: break;
    case FusionMode::kAllConcatInput: s = {Source::kText, Source::kAudio, Source::kVideo}; break;
    case FusionMode::kTextAudioConcatInput: s = {Source::kText, Source::kAudio}; break;
  }
  std::erase_if(s, [&](Source x) {
    return (x == Source::kAudio && !c.use_audio) || (x == Source::kVideo && !c.use_video);
  });
  return s;
}

template <typename T>
Encoded<T> AvsdModel<T>::encode(Graph<T>& g, const ExampleInput<T>& input,
                                const Dropout& dropout) const {
  const auto& c = config_;
  Encoded<T> e;
  Var<T> table = g.param(word_table_);

  // An empty question still needs one entity to attend to.
  std::vector<int> question = input.question;
  if (question.empty()) question.push_back(kUnk);
  const auto q = embed_question(g, table, question_lstm_, std::span<const int>(question), dropout);

  if (c.use_history) {
    std::vector<std::span<const int>> pairs(input.history.begin(), input.history.end());
    e.r_H = embed_history<T>(g, table, pair_lstms_, history_lstm_, pairs, dropout);
  }

  Var<T> audio_rows;
  Mask audio_mask;
  if (c.use_audio) {
    Tensor<T> audio = input.audio;
    audio_mask = input.audio_mask;
    if (audio.empty()) {
      audio = Tensor<T>({1, c.audio_channels});
      audio_mask = {0};
    }
    AVSD_REQUIRE(audio_mask.empty() || audio_mask.size() == audio.dim(0),
                 "audio mask does not match the audio rows");
    audio_rows = embed_audio(g, audio_conv_, g.constant(std::move(audio)));
  }
  std::vector<Var<T>> frames;
  if (c.use_video) {
    AVSD_REQUIRE(input.video.rank() == 2 &&
                     input.video.dim(0) == c.frames * c.video_positions,
                 "video input must be [" + std::to_string(c.frames * c.video_positions) + " x " +
                     std::to_string(c.video_channels) + "], got " +
                     shape_string(input.video.shape()));
    Var<T> v = embed_video(g, video_conv_, g.constant(input.video));
    for (std::size_t f = 0; f < c.frames; ++f)
      frames.push_back(ops::rows(v, f * c.video_positions, c.video_positions));
  }

  if (attention_) {
    std::vector<AttentionInput<T>> inputs(attention_->size());
    if (audio_slot_) inputs[*audio_slot_] = {audio_rows, audio_mask};
    inputs[*question_slot_] = {q.states, {}};
    for (std::size_t f = 0; f < frames.size(); ++f) inputs[*first_frame_slot_ + f] = {frames[f], {}};
    e.attended = run_attention<T>(g, *attention_, inputs);
    e.a_Q = e.attended[*question_slot_].attended;
    if (audio_slot_) e.a_A = e.attended[*audio_slot_].attended;
    for (std::size_t f = 0; f < frames.size(); ++f)
      e.a_V.push_back(e.attended[*first_frame_slot_ + f].attended);
  } else {
    e.a_Q = q.final;
    if (c.use_audio) e.a_A = mean_attended(audio_rows, MaskView(audio_mask));
    for (auto& f : frames) e.a_V.push_back(mean_attended(f, {}));
  }
  if (c.use_history) {
    std::vector<Var<T>> parts{e.a_Q, e.r_H};
    e.a_T = ops::concat<T>(parts);
  } else {
    e.a_T = e.a_Q;
  }

  // Initial decoder state.
  const auto enc = encoder_sources();
  if (c.fusion == FusionMode::kAllFirstState) {
    std::vector<Var<T>> parts{e.a_T};
    if (c.use_audio) parts.push_back(e.a_A);
    parts.insert(parts.end(), e.a_V.begin(), e.a_V.end());
    Var<T> s = state_init_(g, ops::concat<T>(parts));
    e.initial = {ops::tanh(ops::slice(s, 0, c.answer_dim)), ops::slice(s, c.answer_dim, c.answer_dim)};
  } else if (enc.empty()) {
    e.initial = answer_lstm_.zero_state(g);
  } else {
    std::vector<Var<T>> sources;
    std::vector<const Linear*> projections;
    for (auto s : enc) {
      if (s == Source::kText) {
        sources.push_back(e.a_T);
        projections.push_back(&proj_text_);
      } else if (s == Source::kAudio) {
        sources.push_back(e.a_A);
        projections.push_back(&proj_audio_);
      } else {
        for (auto& v : e.a_V) {
          sources.push_back(v);
          projections.push_back(&proj_video_);
        }
      }
    }
    e.encoder_steps = sources.size();
    e.initial = encode_audio_visual<T>(g, audvis_lstm_, sources, projections);
  }
  for (auto s : context_sources()) {
    if (s == Source::kText) e.context.push_back(e.a_T);
    if (s == Source::kAudio) e.context.push_back(e.a_A);
    if (s == Source::kVideo) e.context.insert(e.context.end(), e.a_V.begin(), e.a_V.end());
  }
  return e;
}

template <typename T>
DecoderStep<T> AvsdModel<T>::step(Graph<T>& g, const Encoded<T>& enc, int prev,
                                  const LstmState<T>& state, const Dropout& dropout) const {
  return decode_step<T>(g, g.param(word_table_), answer_lstm_, output_, prev, state, enc.context,
                        dropout);
}

template <typename T>
Var<T> AvsdModel<T>::example_loss(Graph<T>& g, const ExampleInput<T>& input,
                                  const Dropout& dropout, Reduction reduction) const {
  AVSD_REQUIRE(!input.answer_input.empty() &&
                   input.answer_input.size() == input.answer_target.size(),
               "example_loss: answer input and target must align");
  const auto enc = encode(g, input, dropout);
  LstmState<T> state = enc.initial;
  std::vector<Var<T>> logits;
  logits.reserve(input.answer_input.size());
  for (int prev : input.answer_input) {
    auto s = step(g, enc, prev, state, dropout);
    logits.push_back(s.logits);
    state = s.state;
  }
  return sequence_loss<T>(logits, input.answer_target, {}, reduction);
}

template <typename T>
Hypothesis AvsdModel<T>::generate(const ExampleInput<T>& input, const BeamOptions& options,
                                  nlohmann::json* attention_maps) const {
  Graph<T> g(&params_);
  const auto enc = encode(g, input);
  if (attention_maps && attention_)
    *attention_maps = attention_maps_json<T>(*attention_, enc.attended);
  return beam_search(enc.initial, stepper(g, enc), options);
}

template <typename T>
std::map<std::string, std::size_t> AvsdModel<T>::parameter_breakdown(bool by_component) const {
  std::map<std::string, std::size_t> out;
  for (const auto& p : params_) {
    auto dot = p.name.find('.');
    if (by_component && dot != std::string::npos) dot = p.name.find('.', dot + 1);
    out[p.name.substr(0, dot)] += p.value.size();
  }
  return out;
}

template class AvsdModel<float>;
template class AvsdModel<double>;
template ExampleInput<float> example_from_batch(const Batch&, std::size_t);
template ExampleInput<double> example_from_batch(const Batch&, std::size_t);
template Var<float> sequence_loss(std::span<const Var<float>>, std::span<const int>, MaskView,
                                  Reduction);
template Var<double> sequence_loss(std::span<const Var<double>>, std::span<const int>, MaskView,
                                   Reduction);

}  // namespace avsd
