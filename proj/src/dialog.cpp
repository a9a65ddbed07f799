#include "avsd/dialog.hpp"

#include <fstream>

#include "avsd/error.hpp"

namespace avsd {

namespace {

std::string record_name(std::size_t index, const nlohmann::json& rec) {
  std::string name = "dialog record " + std::to_string(index);
  if (rec.is_object() && rec.contains("video_id") && rec["video_id"].is_string())
    name += " (video_id '" + rec["video_id"].get<std::string>() + "')";
  return name;
}

std::string string_field(const nlohmann::json& obj, const char* field,
                         const std::string& where) {
  if (!obj.is_object() || !obj.contains(field))
    throw ParseError(where + ": missing field '" + field + "'");
  if (!obj[field].is_string())
    throw ParseError(where + ": field '" + field + "' must be a string");
  return obj[field].get<std::string>();
}

}  // namespace

std::vector<DialogExample> parse_dialogs(const nlohmann::json& doc, std::size_t max_history) {
  if (!doc.is_array()) throw ParseError("dialog file must contain a top-level JSON list");
  std::vector<DialogExample> examples;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const std::string where = record_name(i, rec);
    const std::string video_id = string_field(rec, "video_id", where);
    if (!rec.contains("dialog") || !rec["dialog"].is_array())
      throw ParseError(where + ": missing or non-list field 'dialog'");
    std::vector<QaPair> turns;
    for (std::size_t t = 0; t < rec["dialog"].size(); ++t) {
      const std::string turn_where = where + " turn " + std::to_string(t);
      const auto& turn = rec["dialog"][t];
      turns.push_back({string_field(turn, "question", turn_where),
                       string_field(turn, "answer", turn_where)});
    }
    for (std::size_t t = 0; t < turns.size(); ++t) {
      DialogExample ex;
      ex.video_id = video_id;
      ex.turn = t;
      const std::size_t first = t > max_history ? t - max_history : 0;
      ex.history.assign(turns.begin() + first, turns.begin() + t);
      ex.question = turns[t].question;
      ex.answer = turns[t].answer;
      examples.push_back(std::move(ex));
    }
  }
  return examples;
}

std::vector<DialogExample> load_dialogs(const std::filesystem::path& path,
                                        std::size_t max_history) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dialog file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_dialogs(doc, max_history);
}

}  // namespace avsd
