#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace avsd {

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumReserved = 4;

/// Lowercases, splits on whitespace and strips ASCII punctuation. Tokens that
/// consist only of punctuation are dropped.
std::vector<std::string> tokenize(std::string_view text);

struct DialogExample;

/// Word <-> id bijection. Ids 0..3 are PAD, SOS, EOS, UNK; corpus words follow
/// in descending frequency, ties broken lexicographically.
class Vocabulary {
 public:
  Vocabulary();
  /// `words` are the non-reserved entries in id order (id 4 first).
  explicit Vocabulary(const std::vector<std::string>& words);

  std::size_t size() const noexcept { return words_.size(); }
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  bool contains(std::string_view word) const;

  std::vector<int> encode(std::string_view text) const;
  /// Joins words with single spaces; skips PAD and SOS, stops at EOS.
  std::string decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Counts question and answer words of every example (each dialog turn is one
/// example, so earlier turns are not double counted through the history).
Vocabulary build_vocab(std::span<const DialogExample> examples, std::size_t min_count = 2);

}  // namespace avsd
