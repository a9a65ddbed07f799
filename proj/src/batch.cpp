#include "avsd/batch.hpp"

#include <algorithm>
#include <random>

#include "avsd/error.hpp"
#include "avsd/feature_file.hpp"
#include "avsd/random.hpp"

namespace avsd {

std::vector<std::size_t> sample_frames(std::size_t total, std::size_t count, SampleMode mode,
                                       std::uint64_t seed) {
  AVSD_REQUIRE(total >= 1, "sample_frames: video has no frames");
  AVSD_REQUIRE(count >= 1, "sample_frames: frame count must be positive");
  std::vector<std::size_t> idx(count);
  if (mode == SampleMode::kEval) {
    for (std::size_t f = 0; f < count; ++f) idx[f] = ((2 * f + 1) * total) / (2 * count);
    return idx;
  }
  std::mt19937_64 rng(seed);
  const std::size_t stride = (total + count - 1) / count;
  const std::size_t phase = std::uniform_int_distribution<std::size_t>(0, stride - 1)(rng);
  for (std::size_t f = 0; f < count; ++f)
    idx[f] = std::min(f * total / count + phase, total - 1);
  return idx;
}

FeatureStore::FeatureStore(std::filesystem::path video_dir, std::filesystem::path audio_dir)
    : video_dir_(std::move(video_dir)), audio_dir_(std::move(audio_dir)) {}

std::filesystem::path FeatureStore::video_path(const std::filesystem::path& dir,
                                               const std::string& video_id) {
  return dir / (video_id + ".video.avsf");
}

std::filesystem::path FeatureStore::audio_path(const std::filesystem::path& dir,
                                               const std::string& video_id) {
  return dir / (video_id + ".audio.avsf");
}

void FeatureStore::put(const std::string& video_id, Tensor<float> video, Tensor<float> audio) {
  AVSD_REQUIRE(video.rank() == 3 || video.rank() == 4, "video features must be rank 3 or 4");
  AVSD_REQUIRE(audio.empty() || audio.rank() == 2, "audio features must be rank 2");
  video_[video_id] = std::move(video);
  audio_[video_id] = std::move(audio);
}

bool FeatureStore::has(const std::string& video_id) const {
  if (video_.contains(video_id)) return true;
  if (video_dir_.empty()) return false;
  return std::filesystem::exists(video_path(video_dir_, video_id)) &&
         std::filesystem::exists(audio_path(audio_dir_, video_id));
}

const Tensor<float>& FeatureStore::video(const std::string& video_id) {
  if (auto it = video_.find(video_id); it != video_.end()) return it->second;
  const auto path = video_path(video_dir_, video_id);
  if (video_dir_.empty() || !std::filesystem::exists(path))
    throw DataError("missing video features for video_id '" + video_id + "' (" +
                    path.string() + ")");
  return video_[video_id] = read_feature_file(path, Modality::kVideo);
}

const Tensor<float>& FeatureStore::audio(const std::string& video_id) {
  if (auto it = audio_.find(video_id); it != audio_.end()) return it->second;
  const auto path = audio_path(audio_dir_, video_id);
  if (audio_dir_.empty() || !std::filesystem::exists(path))
    throw DataError("missing audio features for video_id '" + video_id + "' (" +
                    path.string() + ")");
  return audio_[video_id] = read_feature_file(path, Modality::kAudio);
}

Mask TokenBatch::mask(std::size_t r) const {
  Mask m(cols, 0);
  std::fill_n(m.begin(), lengths[r], 1);
  return m;
}

std::span<const int> HistoryBatch::tokens(std::size_t b, std::size_t t) const {
  return {ids.data() + (b * max_pairs + t) * max_len, pair_lengths[b * max_pairs + t]};
}

Mask Batch::audio_mask(std::size_t b) const {
  Mask m(audio.dim(1), 0);
  std::fill_n(m.begin(), audio_lengths[b], 1);
  return m;
}

Tensor<float> Batch::video_of(std::size_t b) const {
  const std::size_t per = video.size() / video.dim(0);
  std::vector<float> v(video.data() + b * per, video.data() + (b + 1) * per);
  return Tensor<float>({video.dim(1), video.dim(2), video.dim(3)}, std::move(v));
}

Tensor<float> Batch::audio_of(std::size_t b) const {
  const std::size_t per = audio.size() / audio.dim(0);
  std::vector<float> v(audio.data() + b * per, audio.data() + (b + 1) * per);
  return Tensor<float>({audio.dim(1), audio.dim(2)}, std::move(v));
}

namespace {

TokenBatch pad_rows(const std::vector<std::vector<int>>& rows) {
  TokenBatch out;
  out.rows = rows.size();
  for (const auto& r : rows) out.cols = std::max(out.cols, r.size());
  out.cols = std::max<std::size_t>(out.cols, 1);
  out.ids.assign(out.rows * out.cols, kPad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), out.ids.begin() + i * out.cols);
    out.lengths.push_back(rows[i].size());
  }
  return out;
}

}  // namespace

Batch make_batch(std::span<const DialogExample> examples, const Vocabulary& vocab,
                 FeatureStore& features, const BatchOptions& options) {
  AVSD_REQUIRE(!examples.empty(), "make_batch: no examples");
  AVSD_REQUIRE(options.frames >= 1, "make_batch: frame count must be positive");
  const std::size_t B = examples.size();
  Batch batch;

  std::vector<std::vector<int>> questions, answer_in, answer_out;
  std::vector<std::vector<std::vector<int>>> history(B);
  std::size_t max_pairs = 0, max_pair_len = 1;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& ex = examples[b];
    batch.video_ids.push_back(ex.video_id);
    batch.turns.push_back(ex.turn);
    questions.push_back(vocab.encode(ex.question));
    auto words = vocab.encode(ex.answer);
    std::vector<int> in{kSos};
    in.insert(in.end(), words.begin(), words.end());
    words.push_back(kEos);
    answer_in.push_back(std::move(in));
    answer_out.push_back(std::move(words));
    for (const auto& pair : ex.history) {
      auto ids = vocab.encode(pair.question);
      auto a = vocab.encode(pair.answer);
      ids.insert(ids.end(), a.begin(), a.end());
      max_pair_len = std::max(max_pair_len, ids.size());
      history[b].push_back(std::move(ids));
    }
    max_pairs = std::max(max_pairs, history[b].size());
  }
  batch.questions = pad_rows(questions);
  batch.answer_inputs = pad_rows(answer_in);
  batch.answer_targets = pad_rows(answer_out);

  auto& h = batch.history;
  h.batch = B;
  h.max_pairs = std::max<std::size_t>(max_pairs, 1);
  h.max_len = max_pair_len;
  h.ids.assign(B * h.max_pairs * h.max_len, kPad);
  h.pair_lengths.assign(B * h.max_pairs, 0);
  for (std::size_t b = 0; b < B; ++b) {
    h.counts.push_back(history[b].size());
    for (std::size_t t = 0; t < history[b].size(); ++t) {
      const auto& ids = history[b][t];
      std::copy(ids.begin(), ids.end(), h.ids.begin() + (b * h.max_pairs + t) * h.max_len);
      h.pair_lengths[b * h.max_pairs + t] = ids.size();
    }
  }

  // Features: sample F frames per video, pad audio to the longest track.
  std::vector<const Tensor<float>*> videos(B), audios(B);
  std::size_t positions = 0, video_channels = 0, audio_channels = 0, max_audio = 1;
  for (std::size_t b = 0; b < B; ++b) {
    videos[b] = &features.video(examples[b].video_id);
    audios[b] = &features.audio(examples[b].video_id);
    const auto& v = *videos[b];
    const std::size_t c = v.dim(v.rank() - 1);
    const std::size_t p = v.size() / (v.dim(0) * c);
    if (b == 0) {
      positions = p;
      video_channels = c;
    } else if (p != positions || c != video_channels) {
      throw DataError("video features of '" + examples[b].video_id +
                      "' do not match the batch layout");
    }
    if (!audios[b]->empty()) {
      if (audio_channels == 0) audio_channels = audios[b]->dim(1);
      if (audios[b]->dim(1) != audio_channels)
        throw DataError("audio features of '" + examples[b].video_id +
                        "' do not match the batch layout");
      max_audio = std::max(max_audio, audios[b]->dim(0));
    }
  }
  if (audio_channels == 0) audio_channels = kAudioChannels;

  const std::size_t F = options.frames;
  const std::size_t frame_size = positions * video_channels;
  batch.video = Tensor<float>({B, F, positions, video_channels});
  batch.audio = Tensor<float>({B, max_audio, audio_channels});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& v = *videos[b];
    const auto idx = sample_frames(v.dim(0), F, options.mode,
                                   derive_seed(options.seed, b, examples[b].turn));
    for (std::size_t f = 0; f < F; ++f)
      std::copy_n(v.data() + idx[f] * frame_size, frame_size,
                  batch.video.data() + (b * F + f) * frame_size);
    const auto& a = *audios[b];
    const std::size_t steps = a.empty() ? 0 : a.dim(0);
    std::copy_n(a.data(), steps * audio_channels,
                batch.audio.data() + b * max_audio * audio_channels);
    batch.audio_lengths.push_back(steps);
  }
  return batch;
}

}  // namespace avsd
