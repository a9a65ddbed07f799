#include "avsd/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>

#include "avsd/error.hpp"

namespace avsd {

namespace {

const std::map<std::string, FusionMode>& fusion_names() {
  static const std::map<std::string, FusionMode> names = {
      {"audvis_lstm", FusionMode::kAudVisLstm},
      {"vidaud_lstm", FusionMode::kVidAudLstm},
      {"q_first_state", FusionMode::kQuestionFirstState},
      {"all_first_state", FusionMode::kAllFirstState},
      {"all_concat_input", FusionMode::kAllConcatInput},
      {"text_audio_concat_input", FusionMode::kTextAudioConcatInput},
  };
  return names;
}

const std::map<std::string, InitScheme>& init_names() {
  static const std::map<std::string, InitScheme> names = {
      {"default", InitScheme::kDefault}, {"xavier", InitScheme::kXavier}, {"he", InitScheme::kHe}};
  return names;
}

// Field binding: reads a JSON value into a struct member, or writes it out.
using Reader = std::function<void(const nlohmann::json&, const std::string& path)>;
using Writer = std::function<nlohmann::json()>;
struct Field {
  Reader read;
  Writer write;
};
using FieldTable = std::vector<std::pair<std::string, Field>>;

template <typename V>
Field bind(V& target) {
  return {[&target](const nlohmann::json& j, const std::string& path) {
            try {
              if constexpr (std::is_same_v<V, bool>) {
                if (!j.is_boolean()) throw ParseError("");
              } else if constexpr (std::is_integral_v<V>) {
                if (!j.is_number_integer() || (std::is_unsigned_v<V> && j.get<long long>() < 0))
                  throw ParseError("");
              } else if constexpr (std::is_floating_point_v<V>) {
                if (!j.is_number()) throw ParseError("");
              } else {
                if (!j.is_string()) throw ParseError("");
              }
              target = j.get<V>();
            } catch (const std::exception&) {
              throw ParseError("config field '" + path + "' has the wrong type: " + j.dump());
            }
          },
          [&target] { return nlohmann::json(target); }};
}

template <typename E>
Field bind_enum(E& target, const std::map<std::string, E>& names) {
  return {[&target, &names](const nlohmann::json& j, const std::string& path) {
            if (!j.is_string()) throw ParseError("config field '" + path + "' must be a string");
            auto it = names.find(j.get<std::string>());
            if (it == names.end())
              throw ParseError("config field '" + path + "' has unknown value " + j.dump());
            target = it->second;
          },
          [&target, &names] {
            for (const auto& [name, value] : names)
              if (value == target) return nlohmann::json(name);
            return nlohmann::json();
          }};
}

FieldTable model_fields(ModelConfig& m) {
  return {
      {"use_history", bind(m.use_history)},
      {"use_video", bind(m.use_video)},
      {"use_audio", bind(m.use_audio)},
      {"attention", bind(m.attention)},
      {"share_frame_weights", bind(m.share_frame_weights)},
      {"question_prior", bind(m.question_prior)},
      {"video_prior", bind(m.video_prior)},
      {"audio_prior", bind(m.audio_prior)},
      {"fusion", bind_enum(m.fusion, fusion_names())},
      {"frames", bind(m.frames)},
      {"video_positions", bind(m.video_positions)},
      {"video_channels", bind(m.video_channels)},
      {"audio_channels", bind(m.audio_channels)},
      {"video_dim", bind(m.video_dim)},
      {"audio_dim", bind(m.audio_dim)},
      {"word_dim", bind(m.word_dim)},
      {"question_dim", bind(m.question_dim)},
      {"history_dim", bind(m.history_dim)},
      {"history_pair_layers", bind(m.history_pair_layers)},
      {"attention_dim", bind(m.attention_dim)},
      {"pair_dim", bind(m.pair_dim)},
      {"question_prior_len", bind(m.question_prior_len)},
      {"audio_prior_len", bind(m.audio_prior_len)},
      {"encoder_dim", bind(m.encoder_dim)},
      {"answer_dim", bind(m.answer_dim)},
      {"dropout", bind(m.dropout)},
  };
}

FieldTable train_fields(TrainConfig& t) {
  return {
      {"learning_rate", bind(t.learning_rate)},
      {"beta1", bind(t.beta1)},
      {"beta2", bind(t.beta2)},
      {"adam_epsilon", bind(t.adam_epsilon)},
      {"batch_size", bind(t.batch_size)},
      {"max_epochs", bind(t.max_epochs)},
      {"patience", bind(t.patience)},
      {"init", bind_enum(t.init, init_names())},
      {"seed", bind(t.seed)},
      {"clip_norm", bind(t.clip_norm)},
      {"target_train_loss", bind(t.target_train_loss)},
      {"min_count", bind(t.min_count)},
      {"threads", bind(t.threads)},
  };
}

FieldTable decode_fields(DecodeConfig& d) {
  return {
      {"beam_width", bind(d.beam_width)},
      {"max_length", bind(d.max_length)},
      {"length_normalize", bind(d.length_normalize)},
  };
}

FieldTable data_fields(DataConfig& d) {
  return {
      {"train_dialogs", bind(d.train_dialogs)},
      {"val_dialogs", bind(d.val_dialogs)},
      {"test_dialogs", bind(d.test_dialogs)},
      {"video_dir", bind(d.video_dir)},
      {"audio_dir", bind(d.audio_dir)},
      {"vocab", bind(d.vocab)},
      {"checkpoint", bind(d.checkpoint)},
      {"output_dir", bind(d.output_dir)},
      {"max_history", bind(d.max_history)},
  };
}

std::vector<std::pair<std::string, FieldTable>> sections(RunConfig& c) {
  return {{"data", data_fields(c.data)},
          {"model", model_fields(c.model)},
          {"train", train_fields(c.train)},
          {"decode", decode_fields(c.decode)}};
}

void read_section(const nlohmann::json& j, FieldTable& table, const std::string& section) {
  if (!j.is_object()) throw ParseError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ParseError("unknown config field '" + section + "." + key + "'");
    it->second.read(value, section + "." + key);
  }
}

}  // namespace

std::string to_string(FusionMode mode) {
  for (const auto& [name, value] : fusion_names())
    if (value == mode) return name;
  return "unknown";
}

FusionMode fusion_mode_from_string(const std::string& name) {
  auto it = fusion_names().find(name);
  if (it == fusion_names().end()) throw ContractError("unknown fusion mode '" + name + "'");
  return it->second;
}

std::string to_string(InitScheme scheme) {
  for (const auto& [name, value] : init_names())
    if (value == scheme) return name;
  return "unknown";
}

InitScheme init_scheme_from_string(const std::string& name) {
  auto it = init_names().find(name);
  if (it == init_names().end()) throw ContractError("unknown init scheme '" + name + "'");
  return it->second;
}

void validate(const RunConfig& c) {
  const auto& m = c.model;
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ContractError(std::string("config field '") + field + "' must be positive");
  };
  positive(m.frames, "model.frames");
  positive(m.video_positions, "model.video_positions");
  positive(m.video_channels, "model.video_channels");
  positive(m.audio_channels, "model.audio_channels");
  positive(m.video_dim, "model.video_dim");
  positive(m.audio_dim, "model.audio_dim");
  positive(m.word_dim, "model.word_dim");
  positive(m.question_dim, "model.question_dim");
  positive(m.history_dim, "model.history_dim");
  positive(m.history_pair_layers, "model.history_pair_layers");
  positive(m.attention_dim, "model.attention_dim");
  positive(m.pair_dim, "model.pair_dim");
  positive(m.encoder_dim, "model.encoder_dim");
  positive(m.answer_dim, "model.answer_dim");
  if (m.question_prior && m.question_prior_len == 0)
    throw ContractError("config field 'model.question_prior_len' must be positive");
  if (m.audio_prior && m.audio_prior_len == 0)
    throw ContractError("config field 'model.audio_prior_len' must be positive");
  if (!(m.dropout >= 0.0 && m.dropout < 1.0))
    throw ContractError("config field 'model.dropout' must lie in [0, 1)");
  const auto& t = c.train;
  if (!(t.learning_rate > 0.0))
    throw ContractError("config field 'train.learning_rate' must be positive");
  positive(t.batch_size, "train.batch_size");
  positive(t.max_epochs, "train.max_epochs");
  positive(t.patience, "train.patience");
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0)) throw ContractError("config field 'train.beta1' invalid");
  if (!(t.beta2 >= 0.0 && t.beta2 < 1.0)) throw ContractError("config field 'train.beta2' invalid");
  if (!(t.adam_epsilon > 0.0)) throw ContractError("config field 'train.adam_epsilon' invalid");
  if (t.clip_norm < 0.0) throw ContractError("config field 'train.clip_norm' must be >= 0");
  positive(c.decode.beam_width, "decode.beam_width");
}

nlohmann::json to_json(const RunConfig& config) {
  RunConfig copy = config;
  nlohmann::json j;
  j["preset"] = copy.preset;
  for (auto& [name, table] : sections(copy)) {
    nlohmann::json s = nlohmann::json::object();
    for (auto& [key, field] : table) s[key] = field.write();
    j[name] = std::move(s);
  }
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  RunConfig config;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw ParseError("config field 'preset' must be a string");
    apply_preset(config, j["preset"].get<std::string>());
  }
  auto table = sections(config);
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& s) { return s.first == key; });
    if (it == table.end()) throw ParseError("unknown config section '" + key + "'");
    read_section(value, it->second, key);
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  auto config = run_config_from_json(j);
  resolve_paths(config, path.parent_path());
  return config;
}

std::vector<std::string> preset_names() {
  return {"full",
          "q",
          "q+h",
          "q+h+vgg-spatial",
          "q+h+audio",
          "q+h+vgg-spatial+audio",
          "no-attention",
          "no-question-prior",
          "sharing-weights",
          "q-first-state",
          "all-first-state",
          "all-concat-input",
          "q+h+a-concat-input",
          "video-audio-lstm",
          "init-default",
          "init-xavier",
          "init-he",
          "beam-1",
          "beam-2"};
}

void apply_preset(RunConfig& c, const std::string& name) {
  auto& m = c.model;
  auto modalities = [&](bool h, bool v, bool a) {
    m.use_history = h;
    m.use_video = v;
    m.use_audio = a;
  };
  if (name == "full" || name == "q+h+vgg-spatial+audio") {
  } else if (name == "q") {
    modalities(false, false, false);
  } else if (name == "q+h") {
    modalities(true, false, false);
  } else if (name == "q+h+vgg-spatial") {
    modalities(true, true, false);
  } else if (name == "q+h+audio") {
    modalities(true, false, true);
  } else if (name == "no-attention") {
    m.attention = false;
  } else if (name == "no-question-prior") {
    m.question_prior = false;
  } else if (name == "sharing-weights") {
    m.share_frame_weights = true;
  } else if (name == "q-first-state") {
    m.fusion = FusionMode::kQuestionFirstState;
  } else if (name == "all-first-state") {
    m.fusion = FusionMode::kAllFirstState;
  } else if (name == "all-concat-input") {
    m.fusion = FusionMode::kAllConcatInput;
  } else if (name == "q+h+a-concat-input") {
    m.fusion = FusionMode::kTextAudioConcatInput;
  } else if (name == "video-audio-lstm") {
    m.fusion = FusionMode::kVidAudLstm;
  } else if (name == "init-default") {
    c.train.init = InitScheme::kDefault;
  } else if (name == "init-xavier") {
    c.train.init = InitScheme::kXavier;
  } else if (name == "init-he") {
    c.train.init = InitScheme::kHe;
  } else if (name == "beam-1") {
    c.decode.beam_width = 1;
  } else if (name == "beam-2") {
    c.decode.beam_width = 2;
  } else {
    throw ParseError("unknown preset '" + name + "'");
  }
  c.preset = name;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  nlohmann::json j = to_json(config);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ParseError("override '" + a + "' must look like section.field=value");
    const std::string key = a.substr(0, eq);
    const std::string raw = a.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;
    }
    if (key == "preset") {
      if (!value.is_string()) throw ParseError("override 'preset' must be a string");
      RunConfig fresh;
      apply_preset(fresh, value.get<std::string>());
      fresh.data = config.data;
      j = to_json(fresh);
      continue;
    }
    const auto dot = key.find('.');
    if (dot == std::string::npos)
      throw ParseError("override key '" + key + "' must be section.field");
    const std::string section = key.substr(0, dot), field = key.substr(dot + 1);
    if (!j.contains(section) || !j[section].is_object())
      throw ParseError("unknown config section '" + section + "'");
    if (!j[section].contains(field)) throw ParseError("unknown config field '" + key + "'");
    j[section][field] = value;
  }
  // The preset was already folded into the explicit fields.
  const std::string preset = j["preset"].get<std::string>();
  j.erase("preset");
  config = run_config_from_json(j);
  config.preset = preset;
}

void resolve_paths(RunConfig& config, const std::filesystem::path& base) {
  if (base.empty()) return;
  for (std::string* p : {&config.data.train_dialogs, &config.data.val_dialogs,
                         &config.data.test_dialogs, &config.data.video_dir,
                         &config.data.audio_dir, &config.data.vocab, &config.data.checkpoint,
                         &config.data.output_dir}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  }
}

}  // namespace avsd
