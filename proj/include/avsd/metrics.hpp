#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsd/dialog.hpp"
#include "avsd/model.hpp"

namespace avsd {

using Tokens = std::vector<std::string>;

struct EvalItem {
  Tokens candidate;
  std::vector<Tokens> references;  // at least one
};

using EvalCorpus = std::vector<EvalItem>;

/// Candidate and reference strings through the data tokenizer.
EvalItem make_eval_item(const std::string& candidate, const std::vector<std::string>& references);

struct BleuStats {
  std::vector<double> matched;  // clipped n-gram matches, n = 1..n_max
  std::vector<double> total;    // candidate n-grams
  double candidate_length = 0;
  double reference_length = 0;
};

BleuStats bleu_stats(const EvalCorpus& corpus, std::size_t n_max = 4);

/// Corpus BLEU_1..BLEU_n: clipped n-gram counts summed over the corpus,
/// geometric mean of p_1..p_n, brevity penalty exp(1 - r/c) for c < r with r
/// the closest reference length (shorter on ties). Zero precisions become 1e-9.
std::vector<double> bleu(const EvalCorpus& corpus, std::size_t n_max = 4);

/// LCS F-score with recall weight beta, best reference per item.
double rouge_l_item(const EvalItem& item, double beta = 1.2);
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Exact-match alignment, candidate left to right. A token takes the reference
/// slot right after its predecessor's match when that slot holds the same
/// word, otherwise the leftmost unused matching slot.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
/// F_mean = 10PR / (R + 9P), times 1 - 0.5 (chunks / matches)^3.
double meteor_lite_item(const EvalItem& item);
double meteor_lite(const EvalCorpus& corpus);

/// Document frequencies over the reference sets, one document per item.
/// idf(g) = log((N + 1) / (1 + df(g))).
std::vector<double> cider_items(const EvalCorpus& corpus);
double cider(const EvalCorpus& corpus);

struct MetricReport {
  double cider = 0, bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0, rouge_l = 0, meteor_lite = 0;
  std::size_t items = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  /// Variant notes printed above the table.
  static std::vector<std::string> header_notes();
  /// Aligned table in the column order C B4 B3 B2 B1 R M.
  std::string table() const;
  nlohmann::json to_json() const;
};

MetricReport score_corpus(const EvalCorpus& corpus);

struct GeneratedAnswer {
  std::string video_id;
  std::size_t turn = 0;
  std::string question;
  std::string reference;
  std::string answer;
  std::vector<int> tokens;
  double log_prob = 0.0;
  std::optional<std::string> error;  // set when the item was skipped
  nlohmann::json attention;          // null unless requested
};

struct GenerateOptions {
  BeamOptions beam;
  std::size_t threads = 0;
  bool attention_maps = false;
};

/// One answer per example. Examples whose features cannot be loaded are
/// returned with `error` set instead of throwing.
template <typename T>
std::vector<GeneratedAnswer> generate_answers(const AvsdModel<T>& model, const Vocabulary& vocab,
                                              FeatureStore& features,
                                              std::span<const DialogExample> examples,
                                              const GenerateOptions& options);

struct Evaluation {
  MetricReport report;
  std::vector<GeneratedAnswer> answers;
};

/// Generates, then scores each answer against the ground truth as the only
/// reference. Skipped items are counted in the report.
template <typename T>
Evaluation evaluate(const AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
                    std::span<const DialogExample> examples, const GenerateOptions& options);

}  // namespace avsd
