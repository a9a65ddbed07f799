// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance                 all criteria
//   acceptance --criterion X   only X (repeatable)
//   acceptance --list

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "avsd/dialog.hpp"
#include "avsd/feature_file.hpp"
#include "avsd/grad_check.hpp"
#include "avsd/metrics.hpp"
#include "avsd/synthetic.hpp"
#include "avsd/training.hpp"
#include "attention_fixture.hpp"
#include "decode_oracle.hpp"
#include "metrics_fixture.hpp"
#include "micro_model.hpp"

using namespace avsd;
using namespace avsd::fixtures;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks without stopping at the first one.
class Checker {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  Outcome outcome(const std::string& summary) const {
    if (!failed_) return {true, summary};
    std::string d = summary;
    for (const auto& f : failures_) d += "; " + f;
    return {false, d};
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
};

std::string num(const char* fmt, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Outcome grad_integrity() {
  const auto cfg = micro_config();
  constexpr std::size_t kVocab = 9;
  Checker c;
  c.check(cfg.frames == 2, "F != 2");
  for (std::size_t d : {cfg.video_positions, cfg.video_channels, cfg.audio_channels,
                        cfg.video_dim, cfg.audio_dim, cfg.word_dim, cfg.question_dim,
                        cfg.history_dim, cfg.attention_dim, cfg.pair_dim, cfg.encoder_dim,
                        cfg.answer_dim})
    c.check(d <= 8, "micro width above 8");
  c.check(cfg.dropout == 0.0, "dropout on");
  AvsdModel<double> model(cfg, kVocab);
  randomize(model.parameters(), 0);
  const auto in = micro_example<double>(cfg, kVocab, 0);
  const auto start = std::chrono::steady_clock::now();
  const auto r = grad_check([&](Graph<double>& g) { return model.example_loss(g, in); },
                            model.parameters());
  const double secs = seconds_since(start);
  c.check(r.max_relative_error < 1e-4, "relative error at " + r.worst_parameter + "[" +
                                           std::to_string(r.worst_index) + "]");
  c.check(r.checked == model.parameters().scalar_count(), "not every entry checked");
  c.check(secs < 60, "slower than 60 s");
  return c.outcome("max relative error " + num("%.2e", r.max_relative_error) + " over " +
                   std::to_string(r.checked) + " entries, " + num("%.1f", secs) + " s");
}

Outcome attention_invariants() {
  Rng rng(7);
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  Checker c;
  double worst_sum = 0, worst_perm = 0, worst_scale = 0;
  auto max_diff = [](const std::vector<double>& a, const std::vector<double>& b) {
    double m = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
      m = std::max(m, std::abs(a[i] - b[i]));
    return m;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto inst = random_instance(rng);
    const auto base = run(inst);
    const std::size_t n = inst.layout.size();
    for (std::size_t a = 0; a < n; ++a) {
      const auto& p = base.probs[a];
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1));
      for (std::size_t k = 0; k < p.size(); ++k)
        if (!valid(inst.masks[a], k)) c.check(p[k] == 0.0, "masked entity with nonzero mass");
    }
    const std::size_t beta = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const std::size_t k = inst.entities[beta].dim(0);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permuted = inst;
    for (std::size_t i = 0; i < k; ++i) {
      auto src = inst.entities[beta].row(perm[i]);
      std::copy(src.begin(), src.end(), permuted.entities[beta].row(i).begin());
      if (!inst.masks[beta].empty()) permuted.masks[beta][i] = inst.masks[beta][perm[i]];
    }
    const auto after = run(permuted);
    for (std::size_t a = 0; a < n; ++a)
      if (a != beta) worst_perm = std::max(worst_perm, max_diff(after.cross[a], base.cross[a]));
    auto scaled = inst;
    const std::size_t row = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    const double s = scale(rng);
    for (auto& x : scaled.entities[beta].row(row)) x *= s;
    const auto rescaled = run(scaled);
    for (std::size_t a = 0; a < n; ++a)
      worst_scale = std::max(worst_scale, max_diff(rescaled.cross[a], base.cross[a]));
  }
  c.check(worst_sum <= 1e-6, "probabilities do not sum to 1");
  c.check(worst_perm <= 1e-9, "permutation changed a cross term");
  c.check(worst_scale <= 1e-9, "rescaling changed a cross term");
  return c.outcome("1000 instances; |sum-1| " + num("%.1e", worst_sum) + ", permutation " +
                   num("%.1e", worst_perm) + ", rescaling " + num("%.1e", worst_scale));
}

Outcome exhaustive_decode() {
  const auto cfg = micro_config();
  constexpr std::size_t kVocab = 5, kMaxLen = 3;
  // Emittable: EOS, UNK and one word, so 7 finished and 8 unfinished sequences of <= 3 steps.
  constexpr std::size_t kWidth = 64;
  Checker c;
  std::size_t exact = 0, greedy_equal = 0;
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    AvsdModel<double> model(cfg, kVocab);
    randomize(model.parameters(), 7000 + draw, 1.0);
    const auto input = micro_example<double>(cfg, kVocab, draw);
    Best best;
    enumerate(ModelDists{model, input}, {}, 0.0, 0, kMaxLen, best);
    const auto h = model.generate(input, {kWidth, kMaxLen, false});
    const bool same = best.found && h.finished && h.tokens == best.tokens;
    exact += same;
    c.check(same, "draw " + std::to_string(draw) + " differs from the brute-force argmax");

    Graph<double> g(&model.parameters());
    const auto enc = model.encode(g, input);
    const auto greedy = greedy_decode(enc.initial, model.stepper(g, enc), kMaxLen);
    const auto one = model.generate(input, {1, kMaxLen, false});
    const bool eq = one.tokens == greedy.tokens && one.finished == greedy.finished;
    greedy_equal += eq;
    c.check(eq, "width 1 differs from greedy at draw " + std::to_string(draw));
  }
  return c.outcome(std::to_string(exact) + "/100 exact argmax, " +
                   std::to_string(greedy_equal) + "/100 width-1 equal greedy");
}

Outcome factorization() {
  const auto cfg = micro_config();
  Checker c;
  double worst = 0;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    AvsdModel<double> model(cfg, 7);
    randomize(model.parameters(), 300 + draw);
    const auto input = micro_example<double>(cfg, 7, draw);
    const ModelDists dists{model, input};
    // Finished sequences of length <= 4 plus the unfinished mass after 4 steps.
    double total = 0;
    std::function<void(Prefix, double)> walk = [&](Prefix p, double logp) {
      if (p.size() == 4) {
        total += std::exp(logp);
        return;
      }
      const Dist d = dists(p);
      c.check(d[kPad] == kNegInf && d[kSos] == kNegInf, "PAD or SOS emittable");
      for (std::size_t y = 0; y < d.size(); ++y) {
        if (!std::isfinite(d[y])) continue;
        if (int(y) == kEos) {
          total += std::exp(logp + d[y]);
          continue;
        }
        Prefix next = p;
        next.push_back(int(y));
        walk(next, logp + d[y]);
      }
    };
    walk({}, 0.0);
    worst = std::max(worst, std::abs(total - 1));
  }
  c.check(worst <= 1e-5, "sum differs from 1");
  return c.outcome("5 draws, max |sum - 1| " + num("%.1e", worst));
}

Outcome synthetic_overfit() {
  const auto start = std::chrono::steady_clock::now();
  const auto data = make_synthetic(1, 20, 50);
  const auto examples = parse_dialogs(data.dialogs);
  const auto vocab = build_vocab(examples, 2);
  FeatureStore store;
  for (const auto& v : data.videos) store.put(v.video_id, v.video, v.audio);
  Checker c;
  c.check(vocab.size() == 50, "vocabulary has " + std::to_string(vocab.size()) + " entries");

  ModelConfig mc;  // full widths, dropout 0.5
  AvsdModel<float> model(mc, vocab.size());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 200;
  // Below the 0.1 bar, for decoding margin.
  tc.target_train_loss = 0.05;
  tc.seed = 1;
  init_weights(model.parameters(), tc.init, tc.seed);
  const auto r = fit<float>(model, vocab, store, examples, {}, tc);
  const double loss = r.history.empty() ? INFINITY : r.history.back().train_loss;
  c.check(loss < 0.1 && r.history.size() <= 200,
          "loss " + num("%.4f", loss) + " after " + std::to_string(r.history.size()) + " epochs");

  GenerateOptions go;
  go.beam.width = 1;
  const auto answers = generate_answers(model, vocab, store, examples, go);
  std::size_t verbatim = 0;
  EvalCorpus corpus;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    verbatim += answers[i].tokens == vocab.encode(examples[i].answer);
    corpus.push_back(make_eval_item(answers[i].answer, {examples[i].answer}));
  }
  const double frac = double(verbatim) / double(answers.size());
  const double b1 = bleu(corpus, 1)[0];
  const double secs = seconds_since(start);
  c.check(frac >= 0.95, "verbatim below 95%");
  c.check(b1 > 0.95, "B1 not above 0.95");
  c.check(secs < 300, "slower than 5 min");
  return c.outcome("loss " + num("%.4f", loss) + " at epoch " + std::to_string(r.history.size()) +
                   ", verbatim " + std::to_string(verbatim) + "/" +
                   std::to_string(answers.size()) + ", B1 " + num("%.4f", b1) + ", " +
                   num("%.0f", secs) + " s");
}

Outcome early_stopping() {
  const auto data = make_synthetic(2, 4, 60);
  const auto examples = parse_dialogs(data.dialogs);
  const auto vocab = build_vocab(examples, 1);
  FeatureStore store;
  for (const auto& v : data.videos) store.put(v.video_id, v.video, v.audio);
  auto mc = micro_config();
  mc.frames = 4;
  mc.video_positions = kVideoGrid * kVideoGrid;
  mc.video_channels = kVideoChannels;
  mc.audio_channels = kAudioChannels;
  AvsdModel<double> model(mc, vocab.size());
  init_weights(model.parameters(), InitScheme::kHe, 1);

  const std::vector<double> injected{10, 9, 9.5, 9.4, 8, 7, 6};
  std::vector<std::vector<Tensor<double>>> snapshots;
  FitHooks<double> hooks;
  hooks.validation = [&](std::size_t epoch) { return injected.at(epoch - 1); };
  hooks.on_epoch = [&](const EpochRecord&, const ParameterSet<double>& params) {
    std::vector<Tensor<double>> s;
    for (const auto& p : params) s.push_back(p.value);
    snapshots.push_back(std::move(s));
  };
  TrainConfig tc;  // patience 2
  tc.batch_size = 4;
  tc.max_epochs = injected.size();
  const auto r = fit<double>(model, vocab, store, examples, {}, tc, hooks);
  Checker c;
  c.check(tc.patience == 2, "default patience is not 2");
  c.check(r.history.size() == 4, "ran " + std::to_string(r.history.size()) + " epochs");
  c.check(r.stopped_early, "not flagged as stopped early");
  c.check(r.best_epoch == 2, "best epoch " + std::to_string(r.best_epoch));
  bool restored = snapshots.size() >= 2;
  for (std::size_t i = 0; restored && i < model.parameters().size(); ++i)
    restored = model.parameters()[i].value == snapshots[1][i];
  c.check(restored, "parameters are not the epoch-2 snapshot");
  bool moved = snapshots.size() >= 4 && snapshots[1][0] != snapshots[3][0];
  c.check(moved, "parameters did not change after epoch 2");
  return c.outcome("[10, 9, 9.5, 9.4] -> stopped after epoch " +
                   std::to_string(r.history.size()) + ", restored epoch " +
                   std::to_string(r.best_epoch));
}

Outcome metrics_oracles() {
  Checker c;
  const auto corpus = toy_corpus();
  const auto want = toy_expected();
  const auto b = bleu(corpus);
  double worst = 0;
  for (int n = 0; n < 4; ++n) worst = std::max(worst, std::abs(b[n] - want.b[n]));
  worst = std::max(worst, std::abs(rouge_l(corpus) - want.rouge_l));
  worst = std::max(worst, std::abs(meteor_lite(corpus) - want.meteor));
  worst = std::max(worst, std::abs(cider(corpus) - want.cider));
  c.check(worst <= 1e-6, "toy corpus deviates from the hand values");

  EvalCorpus same;
  for (const char* s : {"the man opens the door", "no", "she is holding a red cup"})
    same.push_back(make_eval_item(s, {s}));
  const auto bs = bleu(same);
  bool ones = rouge_l(same) == 1.0;
  for (double x : bs) ones = ones && x == 1.0;
  c.check(ones, "identical corpus does not score 1");
  return c.outcome("3-item fixture max deviation " + num("%.1e", worst) +
                   ", identical corpus B1..B4 = R = 1");
}

Outcome parameter_accounting() {
  constexpr std::size_t kVocab = 1000;
  const ModelConfig m;
  const auto full = count_parameters(AvsdModel<float>(m, kVocab));
  const std::size_t att = m.attention_dim, pair = m.pair_dim, D = m.frames + 2;
  // Per modality: L (att x d), V (att x d), v (att), R (pair x d), w, w_hat, prior;
  // with no prior on audio. Then the |D| x |D| pair table and the gates.
  std::size_t want = 0;
  auto modality = [&](std::size_t d, std::size_t prior) {
    return att * d + att + 2 * pair * d + prior;
  };
  want += modality(m.audio_dim, 0);
  want += modality(m.question_dim, m.question_prior_len);
  want += m.frames * modality(m.video_dim, m.video_positions);
  want += D * D + 2 * D;
  Checker c;
  const std::size_t got = full.modules.at("attention");
  c.check(got == want, "attention subtotal " + std::to_string(got) + " != " +
                           std::to_string(want));
  auto shared_cfg = m;
  shared_cfg.share_frame_weights = true;
  const auto shared = count_parameters(AvsdModel<float>(shared_cfg, kVocab));
  c.check(shared.total < full.total, "sharing does not reduce the total");
  return c.outcome("attention " + std::to_string(got) + " (closed form " + std::to_string(want) +
                   "), total " + std::to_string(full.total) + " -> " +
                   std::to_string(shared.total) + " with frame sharing");
}

Outcome structural() {
  const RunConfig rc;
  const auto& m = rc.model;
  Checker c;
  c.check(rc.decode.beam_width == 3, "beam width");
  c.check(rc.train.learning_rate == 1e-3, "learning rate");
  c.check(rc.train.batch_size == 64, "batch size");
  c.check(m.dropout == 0.5, "dropout");
  c.check(m.fusion == FusionMode::kAudVisLstm, "fusion");

  AvsdModel<float> model(m, 20);
  c.check(model.attention().has_value() && model.attention()->size() == m.frames + 2,
          "|D| != F + 2");
  std::mt19937_64 rng(3);
  ExampleInput<float> in;
  in.question = {4, 5, 6};
  in.history = {{7, 8}, {9}};
  in.video = random_tensor<float>({m.frames * m.video_positions, m.video_channels}, rng);
  in.audio = random_tensor<float>({5, m.audio_channels}, rng);
  in.answer_input = {kSos, 4};
  in.answer_target = {4, kEos};
  Graph<float> g(&model.parameters());
  const auto enc = model.encode(g, in);
  c.check(enc.encoder_steps == m.frames + 1, "Aud-Vis LSTM ran " +
                                                 std::to_string(enc.encoder_steps) + " steps");
  c.check(enc.a_T.size() == 384, "a_T width " + std::to_string(enc.a_T.size()));
  c.check(enc.attended.size() == m.frames + 2, "attended modalities");
  return c.outcome("F = " + std::to_string(m.frames) + ": " + std::to_string(enc.encoder_steps) +
                   " Aud-Vis steps, |D| = " + std::to_string(enc.attended.size()) +
                   ", a_T " + std::to_string(enc.a_T.size()) + ", beam " +
                   std::to_string(rc.decode.beam_width) + ", lr " +
                   num("%g", rc.train.learning_rate) + ", batch " +
                   std::to_string(rc.train.batch_size) + ", dropout " + num("%g", m.dropout));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> all = {
      {"grad-integrity", grad_integrity},
      {"attention-invariants", attention_invariants},
      {"exhaustive-decode", exhaustive_decode},
      {"factorization", factorization},
      {"synthetic-overfit", synthetic_overfit},
      {"early-stopping", early_stopping},
      {"metrics-oracles", metrics_oracles},
      {"parameter-accounting", parameter_accounting},
      {"structural", structural},
  };
  std::vector<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--list") {
      for (const auto& [name, fn] : all) std::cout << name << '\n';
      return 0;
    }
    if (a == "--criterion" && i + 1 < argc) {
      only.push_back(argv[++i]);
      continue;
    }
    std::cerr << "usage: acceptance [--list] [--criterion NAME]...\n";
    return 2;
  }
  for (const auto& name : only) {
    bool known = false;
    for (const auto& [n, fn] : all) known = known || n == name;
    if (!known) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }

  int failed = 0;
  for (const auto& [name, fn] : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << "  " << o.detail << "  ["
              << num("%.1f", seconds_since(start)) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
