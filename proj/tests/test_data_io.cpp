#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <random>

#include "avsd/batch.hpp"
#include "avsd/dialog.hpp"
#include "avsd/error.hpp"
#include "avsd/feature_file.hpp"
#include "avsd/synthetic.hpp"
#include "avsd/text.hpp"

namespace fs = std::filesystem;
using namespace avsd;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("avsd_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json dialog_with_turns(const std::string& id, int turns) {
  nlohmann::json d = {{"video_id", id}, {"dialog", nlohmann::json::array()}};
  for (int t = 0; t < turns; ++t)
    d["dialog"].push_back({{"question", "q" + std::to_string(t)},
                           {"answer", "a" + std::to_string(t)}});
  return d;
}

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  for (auto& x : t.values()) x = dist(rng);
  return t;
}

}  // namespace

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("Is it RED?  Yes, it's red."),
            (std::vector<std::string>{"is", "it", "red", "yes", "its", "red"}));
  EXPECT_TRUE(tokenize(" ... ").empty());
}

TEST(LoadDialogs, ThreeTurnsGiveGrowingHistory) {
  auto ex = parse_dialogs(nlohmann::json::array({dialog_with_turns("v", 3)}));
  ASSERT_EQ(ex.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(ex[t].history.size(), t);
    EXPECT_EQ(ex[t].turn, t);
    EXPECT_EQ(ex[t].question, "q" + std::to_string(t));
  }
  EXPECT_EQ(ex[2].history[0].question, "q0");
  EXPECT_EQ(ex[2].history[1].answer, "a1");
}

TEST(LoadDialogs, TwelveTurnsKeepLatestTen) {
  auto ex = parse_dialogs(nlohmann::json::array({dialog_with_turns("v", 12)}));
  ASSERT_EQ(ex.size(), 12u);
  const auto& last = ex[11];
  ASSERT_EQ(last.history.size(), 10u);
  EXPECT_EQ(last.history.front().question, "q1");
  EXPECT_EQ(last.history.back().question, "q10");
}

TEST(LoadDialogs, EmptyListGivesNoExamples) {
  EXPECT_TRUE(parse_dialogs(nlohmann::json::array()).empty());
}

TEST(LoadDialogs, MissingFieldNamesRecord) {
  nlohmann::json doc = nlohmann::json::array(
      {dialog_with_turns("ok", 1), {{"video_id", "bad_vid"},
                                    {"dialog", {{{"question", "q"}}}}}});
  try {
    parse_dialogs(doc);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad_vid"), std::string::npos) << msg;
    EXPECT_NE(msg.find("answer"), std::string::npos) << msg;
  }
}

TEST(LoadDialogs, MalformedFileIsParseError) {
  auto dir = temp_dir("malformed");
  std::ofstream(dir / "d.json") << "[{\"video_id\": ";
  EXPECT_THROW(load_dialogs(dir / "d.json"), ParseError);
}

TEST(BuildVocab, MinCountThreshold) {
  DialogExample ex;
  ex.question = "a a b";
  std::vector<DialogExample> corpus{ex};
  auto vocab = build_vocab(corpus, 2);
  EXPECT_EQ(vocab.size(), 5u);
  EXPECT_EQ(vocab.id("a"), 4);
  EXPECT_EQ(vocab.id("b"), kUnk);
}

TEST(BuildVocab, EmptyCorpusHasOnlyReserved) {
  auto vocab = build_vocab({}, 1);
  EXPECT_EQ(vocab.size(), static_cast<std::size_t>(kNumReserved));
  EXPECT_EQ(vocab.word(kPad), "<pad>");
  EXPECT_EQ(vocab.word(kEos), "<eos>");
}

TEST(BuildVocab, FrequencyThenLexicographicOrder) {
  DialogExample ex;
  ex.question = "c b a b c";
  ex.answer = "d c";
  std::vector<DialogExample> corpus{ex};
  auto v1 = build_vocab(corpus, 1);
  auto v2 = build_vocab(corpus, 1);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(v1.word(4), "c");
  EXPECT_EQ(v1.word(5), "b");
  EXPECT_EQ(v1.word(6), "a");
  EXPECT_EQ(v1.word(7), "d");
}

TEST(Vocabulary, DecodeNeverEmitsPad) {
  Vocabulary v({"yes", "no"});
  std::vector<int> ids{kSos, 4, kPad, 5, kEos, 4};
  EXPECT_EQ(v.decode(ids), "yes no");
  EXPECT_EQ(Vocabulary::from_json(v.to_json()), v);
}

TEST(SampleFrames, EvalCenters) {
  EXPECT_EQ(sample_frames(100, 4, SampleMode::kEval), (std::vector<std::size_t>{12, 37, 62, 87}));
  EXPECT_EQ(sample_frames(4, 4, SampleMode::kEval), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(sample_frames(2, 4, SampleMode::kEval), (std::vector<std::size_t>{0, 0, 1, 1}));
}

TEST(SampleFrames, ZeroFramesRejected) {
  EXPECT_THROW(sample_frames(0, 4, SampleMode::kEval), ContractError);
}

TEST(SampleFrames, TrainPhaseIsSharedAndBounded) {
  for (std::size_t n : {1u, 3u, 7u, 100u, 101u}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto idx = sample_frames(n, 4, SampleMode::kTrain, seed);
      ASSERT_EQ(idx.size(), 4u);
      EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
      const std::size_t stride = (n + 3) / 4;
      for (std::size_t f = 0; f < 4; ++f) {
        EXPECT_LT(idx[f], n);
        EXPECT_GE(idx[f], std::min(f * n / 4, n - 1));
        EXPECT_LT(idx[f], f * n / 4 + stride);
      }
      EXPECT_EQ(idx, sample_frames(n, 4, SampleMode::kTrain, seed));
    }
  }
}

TEST(FeatureCodec, VideoRoundTripIsBitExact) {
  auto dir = temp_dir("codec");
  auto t = random_tensor({10, 7, 7, 512}, 7);
  write_feature_file(dir / "v.avsf", t, Modality::kVideo);
  auto back = read_feature_file(dir / "v.avsf", Modality::kVideo);
  EXPECT_EQ(back, t);
  auto bytes = read_bytes(dir / "v.avsf");
  write_feature_file(dir / "w.avsf", back, Modality::kVideo);
  EXPECT_EQ(read_bytes(dir / "w.avsf"), bytes);
}

TEST(FeatureCodec, AudioPayloadLength) {
  auto t = random_tensor({7, 128}, 3);
  std::vector<std::byte> bytes;
  append_record(bytes, t, Modality::kAudio);
  const std::size_t header = 8 + 4 * 2;
  EXPECT_EQ(bytes.size() - header, 3584u);
  // Little-endian dims right after the fixed header.
  EXPECT_EQ(std::to_integer<int>(bytes[8]), 7);
  EXPECT_EQ(std::to_integer<int>(bytes[12]), 128);
  EXPECT_EQ(std::to_integer<int>(bytes[13]), 0);
}

TEST(FeatureCodec, LittleEndianPayload) {
  auto t = Tensor<float>({1, 128}, 0.0f);
  t[0] = 1.0f;  // 0x3F800000
  std::vector<std::byte> bytes;
  append_record(bytes, t, Modality::kAudio);
  EXPECT_EQ(std::to_integer<int>(bytes[16]), 0x00);
  EXPECT_EQ(std::to_integer<int>(bytes[18]), 0x80);
  EXPECT_EQ(std::to_integer<int>(bytes[19]), 0x3F);
}

TEST(FeatureCodec, BadMagicReportsOffset) {
  auto dir = temp_dir("magic");
  std::vector<std::byte> bytes;
  append_record(bytes, Tensor<float>({1, 128}), Modality::kAudio);
  for (int i = 0; i < 4; ++i) bytes[i] = std::byte{'X'};
  write_bytes(dir / "x.avsf", bytes);
  try {
    read_feature_file(dir / "x.avsf", Modality::kAudio);
    FAIL() << "expected CodecError";
  } catch (const CodecError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(FeatureCodec, TruncatedPayloadAndBadDtype) {
  auto t = random_tensor({3, 128}, 1);
  std::vector<std::byte> bytes;
  append_record(bytes, t, Modality::kAudio);
  auto cut = bytes;
  cut.resize(cut.size() - 5);
  std::size_t pos = 0;
  EXPECT_THROW(decode_record<float>(cut, pos), CodecError);
  auto bad = bytes;
  bad[6] = std::byte{9};
  pos = 0;
  try {
    decode_record<float>(bad, pos);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_EQ(e.offset(), 6u);
  }
}

TEST(FeatureCodec, ShapeSchemaEnforcedOnWrite) {
  auto dir = temp_dir("schema");
  EXPECT_THROW(write_feature_file(dir / "a.avsf", Tensor<float>({4, 64}), Modality::kAudio),
               ContractError);
  EXPECT_THROW(read_feature_file(dir / "missing.avsf", Modality::kAudio), DataError);
}

TEST(FeatureCodec, RoundTripManyShapes) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    Shape shape;
    const std::size_t rank = 1 + rng() % 4;
    for (std::size_t r = 0; r < rank; ++r) shape.push_back(1 + rng() % 6);
    auto t = random_tensor(shape, rng());
    std::vector<std::byte> bytes;
    append_record(bytes, t, Modality::kTensor);
    append_record(bytes, t.cast<double>(), Modality::kTensor);
    std::size_t pos = 0;
    EXPECT_EQ(decode_record<float>(bytes, pos), t);
    EXPECT_EQ(decode_record<double>(bytes, pos), t.cast<double>());
    EXPECT_EQ(pos, bytes.size());
  }
}

class MakeBatch : public ::testing::Test {
 protected:
  void SetUp() override {
    vocab = Vocabulary({"what", "is", "it", "yes", "no", "a", "b", "c", "d"});
    store.put("v1", random_tensor({6, 49, 16}, 1), random_tensor({4, 128}, 2));
    store.put("v2", random_tensor({3, 49, 16}, 3), random_tensor({9, 128}, 4));
    DialogExample e1{"v1", 0, {}, "what is it", "yes"};
    DialogExample e2{"v2", 1, {{"a b", "c"}}, "what is it a b", "no d"};
    examples = {e1, e2};
  }
  Vocabulary vocab;
  FeatureStore store;
  std::vector<DialogExample> examples;
};

TEST_F(MakeBatch, PadsToLongest) {
  BatchOptions opt;
  auto b = make_batch(examples, vocab, store, opt);
  EXPECT_EQ(b.questions.cols, 5u);
  EXPECT_EQ(b.questions.lengths, (std::vector<std::size_t>{3, 5}));
  EXPECT_EQ(b.questions.row(0)[3], kPad);
  EXPECT_EQ(b.audio.shape(), (Shape{2, 9, 128}));
  EXPECT_EQ(b.audio_lengths, (std::vector<std::size_t>{4, 9}));
  const auto m = b.audio_mask(0);
  EXPECT_EQ(std::count(m.begin(), m.end(), 0), 5);
  EXPECT_EQ(std::count(m.begin() + 4, m.end(), 0), 5);
  for (std::size_t i = 4; i < 9; ++i)
    for (std::size_t c = 0; c < 128; ++c) EXPECT_EQ(b.audio.data()[i * 128 + c], 0.0f);
  EXPECT_EQ(b.video.shape(), (Shape{2, 4, 49, 16}));
  EXPECT_EQ(b.history.counts, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(b.history.tokens(1, 0).size(), 3u);
}

TEST_F(MakeBatch, TeacherForcingAlignment) {
  auto b = make_batch(examples, vocab, store, {});
  const int yes = vocab.id("yes");
  EXPECT_EQ(std::vector<int>(b.answer_inputs.tokens(0).begin(), b.answer_inputs.tokens(0).end()),
            (std::vector<int>{kSos, yes}));
  EXPECT_EQ(
      std::vector<int>(b.answer_targets.tokens(0).begin(), b.answer_targets.tokens(0).end()),
      (std::vector<int>{yes, kEos}));
}

TEST_F(MakeBatch, EvalFramesFollowCenters) {
  auto b = make_batch(examples, vocab, store, {});
  const auto& v2 = store.video("v2");
  const auto idx = sample_frames(3, 4, SampleMode::kEval);
  const std::size_t frame = 49 * 16;
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t i = 0; i < frame; ++i)
      ASSERT_EQ(b.video.data()[(4 + f) * frame + i], v2.data()[idx[f] * frame + i]);
}

TEST_F(MakeBatch, MissingFeaturesNameVideo) {
  examples.push_back(DialogExample{"ghost_video", 0, {}, "what", "no"});
  try {
    make_batch(examples, vocab, store, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost_video"), std::string::npos);
  }
}

TEST(FeatureStore, ReadsFilesByVideoId) {
  auto dir = temp_dir("store");
  auto v = random_tensor({5, 7, 7, 512}, 9);
  auto a = random_tensor({2, 128}, 10);
  write_feature_file(FeatureStore::video_path(dir, "clip"), v, Modality::kVideo);
  write_feature_file(FeatureStore::audio_path(dir, "clip"), a, Modality::kAudio);
  EXPECT_EQ(FeatureStore::video_path(dir, "clip").filename(), "clip.video.avsf");
  FeatureStore store(dir, dir);
  EXPECT_TRUE(store.has("clip"));
  EXPECT_FALSE(store.has("other"));
  EXPECT_EQ(store.video("clip"), v);
  EXPECT_EQ(store.audio("clip"), a);
}

TEST(Synthetic, SameSeedGivesIdenticalBytes) {
  auto d1 = temp_dir("synth1"), d2 = temp_dir("synth2");
  write_synthetic(make_synthetic(5, 6, 50), d1);
  write_synthetic(make_synthetic(5, 6, 50), d2);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    auto rel = fs::relative(entry.path(), d1);
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(d2 / rel)) << rel;
  }
  EXPECT_EQ(files, 13u);
}

TEST(Synthetic, TwentyDialogsWriteFortyFeatureFiles) {
  auto dir = temp_dir("synth20");
  auto data = make_synthetic(1, 20, 50);
  write_synthetic(data, dir);
  std::size_t video = 0, audio = 0;
  for (const auto& e : fs::directory_iterator(dir / "video")) video += e.is_regular_file();
  for (const auto& e : fs::directory_iterator(dir / "audio")) audio += e.is_regular_file();
  EXPECT_EQ(video, 20u);
  EXPECT_EQ(audio, 20u);
  auto examples = load_dialogs(dir / "dialogs.json");
  EXPECT_EQ(examples.size(), 60u);
  auto vocab = build_vocab(examples, 2);
  EXPECT_EQ(vocab.size(), 50u);
  for (const auto& ex : examples)
    for (int id : vocab.encode(ex.answer)) EXPECT_NE(id, kUnk) << ex.answer;
}

TEST(Synthetic, SmallVocabularyFallsBack) {
  for (std::size_t v : {8u, 12u, 20u}) {
    auto data = make_synthetic(2, 10, v);
    auto examples = parse_dialogs(data.dialogs);
    auto vocab = build_vocab(examples, 2);
    EXPECT_LE(vocab.size(), v);
    EXPECT_GE(data.color_words.size(), 2u);
  }
}

// Least-squares linear probe on max-pooled features must separate the planted
// color classes perfectly.
TEST(Synthetic, LinearProbeRecoversColor) {
  auto data = make_synthetic(3, 20, 50);
  const std::size_t n = data.videos.size();
  const std::size_t classes = data.color_words.size();
  Eigen::MatrixXd X(n, kVideoChannels + 1);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = data.videos[i].video;
    const std::size_t rows = v.size() / kVideoChannels;
    for (std::size_t c = 0; c < kVideoChannels; ++c) {
      float m = v[c];
      for (std::size_t r = 1; r < rows; ++r) m = std::max(m, v[r * kVideoChannels + c]);
      X(i, c) = m;
    }
    X(i, kVideoChannels) = 1.0;
    Y(i, data.videos[i].color) = 1.0;
  }
  Eigen::MatrixXd W = X.completeOrthogonalDecomposition().solve(Y);
  Eigen::MatrixXd P = X * W;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index arg;
    P.row(i).maxCoeff(&arg);
    correct += static_cast<int>(arg) == data.videos[i].color;
  }
  EXPECT_EQ(correct, n);
}
