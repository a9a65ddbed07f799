#include "avsd/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "avsd/dialog.hpp"
#include "avsd/error.hpp"

namespace avsd {

namespace {
const char* const kReservedWords[kNumReserved] = {"<pad>", "<sos>", "<eos>", "<unk>"};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const char* w : kReservedWords) {
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.emplace_back(w);
  }
  for (const auto& w : words) {
    AVSD_REQUIRE(!w.empty(), "vocabulary words must be nonempty");
    AVSD_REQUIRE(!ids_.contains(w), "duplicate vocabulary word: " + w);
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

int Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  AVSD_REQUIRE(id >= 0 && std::size_t(id) < words_.size(),
               "token id " + std::to_string(id) + " outside vocabulary");
  return words_[std::size_t(id)];
}

bool Vocabulary::contains(std::string_view word) const {
  return ids_.contains(std::string(word));
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kSos) continue;
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return nlohmann::json{{"words", std::vector<std::string>(words_.begin() + kNumReserved,
                                                           words_.end())}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("words") || !j["words"].is_array())
    throw ParseError("vocabulary JSON must be an object with a \"words\" array");
  return Vocabulary(j["words"].get<std::vector<std::string>>());
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary to " + path.string());
  out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("vocabulary " + path.string() + ": " + e.what());
  }
}

Vocabulary build_vocab(std::span<const DialogExample> examples, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& ex : examples) {
    for (auto& t : tokenize(ex.question)) ++counts[t];
    for (auto& t : tokenize(ex.answer)) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [word, n] : counts)
    if (n >= std::max<std::size_t>(min_count, 1)) kept.emplace_back(word, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [word, n] : kept) words.push_back(word);
  return Vocabulary(words);
}

}  // namespace avsd
