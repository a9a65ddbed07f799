#include "avsd/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <random>

#include "avsd/batch.hpp"
#include "avsd/error.hpp"
#include "avsd/feature_file.hpp"
#include "avsd/text.hpp"

namespace avsd {

namespace {

constexpr std::array<const char*, 16> kColors = {
    "red", "blue", "green", "yellow", "black", "white", "orange", "purple",
    "pink", "brown", "gray", "cyan", "gold", "silver", "navy", "teal"};
constexpr std::array<const char*, 16> kCounts = {
    "zero", "one", "two", "three", "four", "five", "six", "seven",
    "eight", "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen"};
constexpr std::array<const char*, 16> kSounds = {
    "music", "speech", "silence", "barking", "laughing", "clapping", "typing", "singing",
    "whistling", "knocking", "ringing", "humming", "coughing", "crying", "cheering", "talking"};
constexpr std::array<const char*, 24> kFillers = {
    "please", "now", "exactly", "here", "video", "clip", "scene", "kindly",
    "actually", "really", "maybe", "also", "today", "quickly", "briefly", "again",
    "still", "then", "overall", "mostly", "just", "so", "well", "right"};

constexpr std::size_t kBlock = 8;
constexpr std::size_t kCountOffset = 256;
// Distinct template words: full mode uses three question types, minimal mode a
// one-word color question.
constexpr std::size_t kFullTemplateWords = 16;
constexpr std::size_t kMinimalTemplateWords = 1;

std::string filler_word(std::size_t i) {
  if (i < kFillers.size()) return kFillers[i];
  char buf[32];
  std::snprintf(buf, sizeof buf, "filler%zu", i);
  return buf;
}

std::vector<int> balanced_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

}  // namespace

SyntheticDataset make_synthetic(std::uint64_t seed, std::size_t n_dialogs, std::size_t vocab_size,
                                const SyntheticOptions& options) {
  AVSD_REQUIRE(vocab_size >= 8, "synthetic vocab_size must be at least 8");
  AVSD_REQUIRE(n_dialogs >= 1, "synthetic n_dialogs must be positive");
  AVSD_REQUIRE(options.min_frames >= 1 && options.min_frames <= options.max_frames,
               "synthetic frame range invalid");
  AVSD_REQUIRE(options.min_audio_steps >= 1 && options.min_audio_steps <= options.max_audio_steps,
               "synthetic audio range invalid");
  std::mt19937_64 rng(seed);

  // Every class word must occur at least twice to survive min_count 2.
  const std::size_t class_cap = std::clamp<std::size_t>(n_dialogs / 2, 2, kColors.size());
  const std::size_t available = vocab_size - kNumReserved;
  const bool full = available >= kFullTemplateWords + 6 && n_dialogs >= 4;

  std::array<std::size_t, 3> classes{0, 0, 0};
  std::size_t fillers = 0;
  if (full) {
    std::size_t remaining = available - kFullTemplateWords;
    const std::array<std::size_t, 3> base{8, 5, 5};
    for (std::size_t t = 0; t < 3; ++t) {
      classes[t] = std::min({base[t], class_cap, remaining - 2 * (2 - t)});
      remaining -= classes[t];
    }
    const std::size_t filler_cap = (3 * n_dialogs) / 2;
    fillers = std::min(remaining, filler_cap);
    remaining -= fillers;
    for (std::size_t t = 0; remaining > 0 && t < 3; ++t) {
      const std::size_t extra = std::min(remaining, class_cap - std::min(class_cap, classes[t]));
      classes[t] += extra;
      remaining -= extra;
    }
  } else {
    std::size_t remaining = available - kMinimalTemplateWords;
    classes[0] = std::min(remaining, class_cap);
    remaining -= classes[0];
    fillers = std::min(remaining, n_dialogs / 2);
  }

  SyntheticDataset data;
  for (std::size_t i = 0; i < classes[0]; ++i) data.color_words.emplace_back(kColors[i]);
  for (std::size_t i = 0; i < classes[1]; ++i) data.count_words.emplace_back(kCounts[i]);
  for (std::size_t i = 0; i < classes[2]; ++i) data.sound_words.emplace_back(kSounds[i]);

  const auto colors = balanced_labels(n_dialogs, classes[0], rng);
  const auto counts = full ? balanced_labels(n_dialogs, classes[1], rng) : std::vector<int>{};
  const auto sounds = full ? balanced_labels(n_dialogs, classes[2], rng) : std::vector<int>{};

  std::uniform_real_distribution<float> noise(0.0f, 0.1f);
  std::uniform_int_distribution<std::size_t> cell(0, kVideoGrid * kVideoGrid - 1);
  std::uniform_int_distribution<std::size_t> frame_count(options.min_frames, options.max_frames);
  std::uniform_int_distribution<std::size_t> step_count(options.min_audio_steps,
                                                        options.max_audio_steps);
  const std::size_t cells = kVideoGrid * kVideoGrid;

  data.dialogs = nlohmann::json::array();
  std::size_t question_index = 0;
  for (std::size_t d = 0; d < n_dialogs; ++d) {
    SyntheticVideo v;
    char id[32];
    std::snprintf(id, sizeof id, "synth%04zu", d);
    v.video_id = id;
    v.color = colors[d];
    v.count = full ? counts[d] : 0;
    v.sound = full ? sounds[d] : 0;
    v.color_cell = cell(rng);
    do {
      v.count_cell = cell(rng);
    } while (v.count_cell == v.color_cell);

    const std::size_t frames = frame_count(rng);
    v.video = Tensor<float>({frames, kVideoGrid, kVideoGrid, kVideoChannels});
    for (auto& x : v.video.values()) x = noise(rng);
    for (std::size_t f = 0; f < frames; ++f) {
      float* frame = v.video.data() + f * cells * kVideoChannels;
      std::fill_n(frame + v.color_cell * kVideoChannels + kBlock * v.color, kBlock, 1.0f);
      if (full)
        std::fill_n(frame + v.count_cell * kVideoChannels + kCountOffset + kBlock * v.count,
                    kBlock, 1.0f);
    }
    const std::size_t steps = step_count(rng);
    v.audio = Tensor<float>({steps, kAudioChannels});
    for (auto& x : v.audio.values()) x = noise(rng);
    if (full)
      for (std::size_t s = 0; s < steps; ++s)
        std::fill_n(v.audio.data() + s * kAudioChannels + kBlock * v.sound, kBlock, 1.0f);

    auto next_filler = [&]() -> std::string {
      if (fillers == 0) return "";
      return " " + filler_word(question_index++ % fillers);
    };
    nlohmann::json turns = nlohmann::json::array();
    if (full) {
      turns.push_back({{"question", "what color is the object" + next_filler() + "?"},
                       {"answer", "it is " + data.color_words[v.color] + "."}});
      turns.push_back({{"question", "how many people are there" + next_filler() + "?"},
                       {"answer", "there are " + data.count_words[v.count] + "."}});
      turns.push_back({{"question", "what sound do you hear" + next_filler() + "?"},
                       {"answer", "i hear " + data.sound_words[v.sound] + "."}});
    } else {
      turns.push_back({{"question", "color" + next_filler() + "?"},
                       {"answer", data.color_words[v.color]}});
    }
    data.dialogs.push_back({{"video_id", v.video_id}, {"dialog", std::move(turns)}});
    data.videos.push_back(std::move(v));
  }
  return data;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "dialogs.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "dialogs.json").string());
    out << data.dialogs.dump(2) << '\n';
  }
  for (const auto& v : data.videos) {
    write_feature_file(FeatureStore::video_path(dir / "video", v.video_id), v.video,
                       Modality::kVideo);
    write_feature_file(FeatureStore::audio_path(dir / "audio", v.video_id), v.audio,
                       Modality::kAudio);
  }
}

}  // namespace avsd
