#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace avsd {

inline constexpr std::size_t kDefaultHistoryTurns = 10;

struct QaPair {
  std::string question;
  std::string answer;
};

/// One dialog turn to answer: the question, its reference answer (empty at
/// inference) and up to `max_history` preceding turns, oldest first.
struct DialogExample {
  std::string video_id;
  std::size_t turn = 0;
  std::vector<QaPair> history;
  std::string question;
  std::string answer;
};

/// Expands `[{"video_id": ..., "dialog": [{"question", "answer"}, ...]}, ...]`
/// into one example per turn. Throws ParseError naming the offending record.
std::vector<DialogExample> parse_dialogs(const nlohmann::json& doc,
                                         std::size_t max_history = kDefaultHistoryTurns);
std::vector<DialogExample> load_dialogs(const std::filesystem::path& path,
                                        std::size_t max_history = kDefaultHistoryTurns);

}  // namespace avsd
