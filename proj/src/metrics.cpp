#include "avsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "avsd/error.hpp"
#include "avsd/text.hpp"
#include "avsd/training.hpp"

namespace avsd {

namespace {

constexpr double kBleuEpsilon = 1e-9;
constexpr std::size_t kCiderMaxN = 4;

using NgramCounts = std::map<std::string, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key = t[i];
    for (std::size_t k = 1; k < n; ++k) key += '\x1f' + t[i + k];
    ++out[key];
  }
  return out;
}

void require_corpus(const EvalCorpus& corpus, const char* who) {
  AVSD_REQUIRE(!corpus.empty(), std::string(who) + ": empty corpus");
  for (const auto& item : corpus)
    AVSD_REQUIRE(!item.references.empty(), std::string(who) + ": item without a reference");
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename F>
double mean_over(const EvalCorpus& corpus, F&& per_item) {
  double s = 0;
  for (const auto& item : corpus) s += per_item(item);
  return s / double(corpus.size());
}

}  // namespace

EvalItem make_eval_item(const std::string& candidate, const std::vector<std::string>& references) {
  EvalItem item;
  item.candidate = tokenize(candidate);
  for (const auto& r : references) item.references.push_back(tokenize(r));
  return item;
}

BleuStats bleu_stats(const EvalCorpus& corpus, std::size_t n_max) {
  require_corpus(corpus, "bleu");
  AVSD_REQUIRE(n_max >= 1, "bleu: n_max must be positive");
  std::vector<double> matched(n_max, 0), total(n_max, 0);
  double c = 0, r = 0;
  for (const auto& item : corpus) {
    const double len = double(item.candidate.size());
    c += len;
    double best = double(item.references[0].size());
    for (const auto& ref : item.references) {
      const double d = std::abs(double(ref.size()) - len), bd = std::abs(best - len);
      if (d < bd || (d == bd && double(ref.size()) < best)) best = double(ref.size());
    }
    r += best;
    for (std::size_t n = 1; n <= n_max; ++n) {
      const auto cand = ngrams(item.candidate, n);
      NgramCounts max_ref;
      for (const auto& ref : item.references)
        for (const auto& [g, k] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cand) {
        total[n - 1] += double(k);
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += double(std::min(k, it->second));
      }
    }
  }
  return {matched, total, c, r};
}

std::vector<double> bleu(const EvalCorpus& corpus, std::size_t n_max) {
  const auto st = bleu_stats(corpus, n_max);
  const auto& matched = st.matched;
  const auto& total = st.total;
  const double c = st.candidate_length, r = st.reference_length;
  std::vector<double> out(n_max, 0.0);
  if (c == 0) return out;
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  double log_sum = 0;
  for (std::size_t n = 0; n < n_max; ++n) {
    const double p = matched[n] > 0 ? matched[n] / total[n] : kBleuEpsilon;
    log_sum += std::log(p);
    out[n] = bp * std::exp(log_sum / double(n + 1));
  }
  return out;
}

double rouge_l_item(const EvalItem& item, double beta) {
  double best = 0;
  for (const auto& ref : item.references) {
    const double l = double(lcs(item.candidate, ref));
    if (l == 0) continue;
    const double p = l / double(item.candidate.size()), rec = l / double(ref.size());
    const double b2 = beta * beta;
    best = std::max(best, (1 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

double rouge_l(const EvalCorpus& corpus, double beta) {
  require_corpus(corpus, "rouge_l");
  return mean_over(corpus, [&](const EvalItem& i) { return rouge_l_item(i, beta); });
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  std::vector<bool> used(reference.size(), false);
  MeteorAlignment a;
  std::optional<std::size_t> prev;  // reference slot of the previous candidate token
  for (const auto& word : candidate) {
    std::optional<std::size_t> slot;
    if (prev && *prev + 1 < reference.size() && !used[*prev + 1] && reference[*prev + 1] == word)
      slot = *prev + 1;
    for (std::size_t j = 0; !slot && j < reference.size(); ++j)
      if (!used[j] && reference[j] == word) slot = j;
    if (!slot) {
      prev.reset();
      continue;
    }
    used[*slot] = true;
    ++a.matches;
    if (!prev || *slot != *prev + 1) ++a.chunks;
    prev = slot;
  }
  return a;
}

double meteor_lite_item(const EvalItem& item) {
  double best = 0;
  for (const auto& ref : item.references) {
    const auto a = meteor_align(item.candidate, ref);
    if (a.matches == 0) continue;
    const double m = double(a.matches);
    const double p = m / double(item.candidate.size()), r = m / double(ref.size());
    const double fmean = 10 * p * r / (r + 9 * p);
    const double frag = double(a.chunks) / m;
    best = std::max(best, fmean * (1 - 0.5 * frag * frag * frag));
  }
  return best;
}

double meteor_lite(const EvalCorpus& corpus) {
  require_corpus(corpus, "meteor_lite");
  return mean_over(corpus, meteor_lite_item);
}

std::vector<double> cider_items(const EvalCorpus& corpus) {
  require_corpus(corpus, "cider");
  const double n_docs = double(corpus.size());
  std::vector<std::map<std::string, double>> df(kCiderMaxN);
  for (const auto& item : corpus)
    for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
      NgramCounts seen;
      for (const auto& ref : item.references)
        for (const auto& [g, k] : ngrams(ref, n)) seen[g] = 1;
      for (const auto& [g, k] : seen) df[n - 1][g] += 1;
    }
  auto idf = [&](std::size_t n, const std::string& g) {
    auto it = df[n - 1].find(g);
    const double d = it == df[n - 1].end() ? 0.0 : it->second;
    return std::log((n_docs + 1) / (1 + d));
  };
  auto vec = [&](const Tokens& t, std::size_t n) {
    std::map<std::string, double> v;
    for (const auto& [g, k] : ngrams(t, n)) v[g] = double(k) * idf(n, g);
    return v;
  };
  auto norm = [](const std::map<std::string, double>& v) {
    double s = 0;
    for (const auto& [g, x] : v) s += x * x;
    return std::sqrt(s);
  };

  std::vector<double> out;
  for (const auto& item : corpus) {
    double sum_n = 0;
    for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
      const auto vc = vec(item.candidate, n);
      const double nc = norm(vc);
      double sum_r = 0;
      for (const auto& ref : item.references) {
        const auto vr = vec(ref, n);
        const double nr = norm(vr);
        if (nc == 0 || nr == 0) continue;
        double dot = 0;
        for (const auto& [g, x] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += x * it->second;
        }
        sum_r += dot / (nc * nr);
      }
      sum_n += sum_r / double(item.references.size());
    }
    out.push_back(10.0 * sum_n / double(kCiderMaxN));
  }
  return out;
}

double cider(const EvalCorpus& corpus) {
  const auto items = cider_items(corpus);
  double s = 0;
  for (double x : items) s += x;
  return s / double(items.size());
}

std::vector<std::string> MetricReport::header_notes() {
  return {
      "BLEU: corpus-level clipped n-gram precision, closest reference length, "
      "zero precisions replaced by 1e-9",
      "ROUGE-L: LCS F-score with beta 1.2, best reference, mean over items",
      "METEOR-lite: exact unigram matches only (no stemming, no synonyms), "
      "not comparable with METEOR",
      "CIDEr: plain (no length penalty, no clipping), n = 1..4, x10, "
      "idf = log((N + 1) / (1 + df)) with df counted over reference sets",
  };
}

std::string MetricReport::table() const {
  std::ostringstream os;
  for (const auto& n : header_notes()) os << "# " << n << '\n';
  for (const auto& w : warnings) os << "# warning: " << w << '\n';
  os << "# items " << items << ", skipped " << skipped << '\n';
  char buf[256];
  std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %8s %8s %8s\n", "C", "B4", "B3", "B2", "B1",
                "R", "M");
  os << buf;
  std::snprintf(buf, sizeof buf, "%8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", cider, bleu4,
                bleu3, bleu2, bleu1, rouge_l, meteor_lite);
  os << buf;
  return os.str();
}

nlohmann::json MetricReport::to_json() const {
  return {{"C", cider},       {"B4", bleu4},          {"B3", bleu3},
          {"B2", bleu2},      {"B1", bleu1},          {"R", rouge_l},
          {"M", meteor_lite}, {"items", items},       {"skipped", skipped},
          {"notes", header_notes()}, {"warnings", warnings}};
}

MetricReport score_corpus(const EvalCorpus& corpus) {
  MetricReport r;
  r.items = corpus.size();
  if (corpus.empty()) {
    r.warnings.push_back("empty corpus, all scores 0");
    return r;
  }
  if (corpus.size() < 2) r.warnings.push_back("single-item corpus, CIDEr idf is degenerate");
  const auto b = bleu(corpus);
  r.bleu1 = b[0];
  r.bleu2 = b[1];
  r.bleu3 = b[2];
  r.bleu4 = b[3];
  r.rouge_l = rouge_l(corpus);
  r.meteor_lite = meteor_lite(corpus);
  r.cider = cider(corpus);
  return r;
}

template <typename T>
std::vector<GeneratedAnswer> generate_answers(const AvsdModel<T>& model, const Vocabulary& vocab,
                                              FeatureStore& features,
                                              std::span<const DialogExample> examples,
                                              const GenerateOptions& options) {
  std::vector<GeneratedAnswer> out(examples.size());
  std::vector<std::optional<ExampleInput<T>>> inputs(examples.size());
  BatchOptions bo;
  bo.frames = model.config().frames;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    auto& a = out[i];
    a.video_id = ex.video_id;
    a.turn = ex.turn;
    a.question = ex.question;
    a.reference = ex.answer;
    try {
      const auto batch = make_batch(examples.subspan(i, 1), vocab, features, bo);
      inputs[i] = example_from_batch<T>(batch, 0);
    } catch (const DataError& e) {
      a.error = e.what();
    } catch (const CodecError& e) {
      a.error = e.what();
    }
  }
  parallel_for(examples.size(), resolve_threads(options.threads),
               [&](std::size_t i, std::size_t) {
                 if (!inputs[i]) return;
                 auto& a = out[i];
                 nlohmann::json maps;
                 const auto h = model.generate(*inputs[i], options.beam,
                                               options.attention_maps ? &maps : nullptr);
                 a.tokens = h.tokens;
                 a.log_prob = h.log_prob;
                 a.answer = vocab.decode(h.tokens);
                 if (options.attention_maps) a.attention = std::move(maps);
               });
  return out;
}

template <typename T>
Evaluation evaluate(const AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
                    std::span<const DialogExample> examples, const GenerateOptions& options) {
  Evaluation ev;
  ev.answers = generate_answers(model, vocab, features, examples, options);
  EvalCorpus corpus;
  std::size_t skipped = 0;
  for (const auto& a : ev.answers) {
    if (a.error) {
      ++skipped;
      continue;
    }
    corpus.push_back(make_eval_item(a.answer, {a.reference}));
  }
  ev.report = score_corpus(corpus);
  ev.report.skipped = skipped;
  return ev;
}

#define AVSD_INSTANTIATE_METRICS(T)                                                          \
  template std::vector<GeneratedAnswer> generate_answers(                                    \
      const AvsdModel<T>&, const Vocabulary&, FeatureStore&, std::span<const DialogExample>, \
      const GenerateOptions&);                                                               \
  template Evaluation evaluate(const AvsdModel<T>&, const Vocabulary&, FeatureStore&,        \
                               std::span<const DialogExample>, const GenerateOptions&);

AVSD_INSTANTIATE_METRICS(float)
AVSD_INSTANTIATE_METRICS(double)

}  // namespace avsd
