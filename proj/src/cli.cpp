#include "avsd/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avsd/config.hpp"
#include "avsd/error.hpp"
#include "avsd/grad_check.hpp"
#include "avsd/metrics.hpp"
#include "avsd/micro.hpp"
#include "avsd/synthetic.hpp"
#include "avsd/training.hpp"

namespace avsd {

namespace {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

struct CommonOptions {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "JSON run configuration");
  cmd->add_option("--preset", o.preset, "named ablation preset");
  cmd->add_option("-s,--set", o.overrides, "override, section.field=value (repeatable)");
}

RunConfig effective_config(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_run_config(o.config);
  if (!o.preset.empty()) apply_overrides(cfg, {"preset=" + o.preset});
  apply_overrides(cfg, o.overrides);
  validate(cfg);
  return cfg;
}

const std::string& required(const std::string& value, const char* field) {
  if (value.empty()) throw UsageError(std::string("config field '") + field + "' is required");
  return value;
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir = cfg.data.output_dir;
  fs::create_directories(dir);
  return dir;
}

std::string config_line(const RunConfig& cfg) { return to_json(cfg).dump(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::vector<DialogExample> load_split(const RunConfig& cfg, const std::string& split) {
  if (split == "train")
    return load_dialogs(required(cfg.data.train_dialogs, "data.train_dialogs"),
                        cfg.data.max_history);
  if (split == "val")
    return load_dialogs(required(cfg.data.val_dialogs, "data.val_dialogs"), cfg.data.max_history);
  if (split == "test")
    return load_dialogs(required(cfg.data.test_dialogs, "data.test_dialogs"),
                        cfg.data.max_history);
  throw UsageError("unknown split '" + split + "' (train, val or test)");
}

FeatureStore feature_store(const RunConfig& cfg) {
  return FeatureStore(required(cfg.data.video_dir, "data.video_dir"),
                      required(cfg.data.audio_dir, "data.audio_dir"));
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

int prepare_vocab(const RunConfig& cfg, const std::string& out_path, std::ostream& out) {
  const auto train = load_split(cfg, "train");
  const auto vocab = build_vocab(train, cfg.train.min_count);
  fs::path path = !out_path.empty()          ? fs::path(out_path)
                  : !cfg.data.vocab.empty() ? fs::path(cfg.data.vocab)
                                             : output_dir(cfg) / "vocab.json";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  vocab.save(path);
  out << "vocabulary of " << vocab.size() << " words (min_count " << cfg.train.min_count
      << ") from " << train.size() << " turns -> " << path.string() << '\n';
  return kExitOk;
}

int train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto train_set = load_split(cfg, "train");
  std::vector<DialogExample> val_set;
  if (!cfg.data.val_dialogs.empty()) val_set = load_split(cfg, "val");
  const fs::path dir = output_dir(cfg);

  Vocabulary vocab;
  if (!cfg.data.vocab.empty() && fs::exists(cfg.data.vocab)) {
    vocab = Vocabulary::load(cfg.data.vocab);
  } else {
    vocab = build_vocab(train_set, cfg.train.min_count);
    vocab.save(dir / "vocab.json");
  }
  auto store = feature_store(cfg);

  AvsdModel<float> model(cfg.model, vocab.size());
  init_weights(model.parameters(), cfg.train.init, cfg.train.seed);
  out << "model: " << model.parameters().scalar_count() << " parameters, vocabulary "
      << vocab.size() << ", " << train_set.size() << " training turns, " << val_set.size()
      << " validation turns\n";

  const fs::path log_path = dir / "train_log.csv";
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot write " + log_path.string());
  log << "# config: " << config_line(cfg) << '\n' << "epoch,train_loss,val_perplexity\n";

  FitHooks<float> hooks;
  hooks.on_epoch = [&](const EpochRecord& r, const ParameterSet<float>&) {
    log << r.epoch << ',' << fmt("%.9g", r.train_loss) << ',' << fmt("%.9g", r.val_perplexity)
        << '\n';
    log.flush();
    out << "epoch " << r.epoch << "  loss " << fmt("%.4f", r.train_loss) << "  val_ppl "
        << fmt("%.4f", r.val_perplexity) << "  (" << fmt("%.1f", r.seconds) << " s)\n";
  };
  const auto result = fit<float>(model, vocab, store, train_set, val_set, cfg.train, hooks);

  const fs::path ckpt =
      cfg.data.checkpoint.empty() ? dir / "model.ckpt" : fs::path(cfg.data.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  const CheckpointInfo info{to_json(cfg), result.best_epoch, result.best_val_perplexity, vocab};
  save_checkpoint(ckpt, model.parameters(), info);
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");

  out << "best epoch " << result.best_epoch;
  if (!val_set.empty()) out << " (val_ppl " << fmt("%.4f", result.best_val_perplexity) << ")";
  if (result.stopped_early) out << ", stopped early";
  if (result.reached_target) out << ", reached target loss";
  out << "\ncheckpoint " << ckpt.string() << "\nlog " << log_path.string() << '\n';
  if (result.diverged) {
    err << "error: training diverged: " << result.message << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

struct Loaded {
  fs::path path;
  CheckpointInfo info;
  std::unique_ptr<AvsdModel<float>> model;
};

Loaded load_model(const RunConfig& cfg, const std::string& option) {
  const std::string path = option.empty() ? cfg.data.checkpoint : option;
  if (path.empty()) throw UsageError("checkpoint required (--checkpoint or data.checkpoint)");
  if (!fs::exists(path)) throw DataError("checkpoint required: " + path + " does not exist");
  Loaded l;
  l.path = path;
  l.info = read_checkpoint_info(path);
  const auto trained = l.info.config.is_object() && !l.info.config.empty()
                           ? run_config_from_json(l.info.config)
                           : RunConfig{};
  l.model = std::make_unique<AvsdModel<float>>(trained.model, l.info.vocab.size());
  load_checkpoint(path, l.model->parameters());
  return l;
}

GenerateOptions generate_options(const RunConfig& cfg, bool attention) {
  GenerateOptions g;
  g.beam.width = cfg.decode.beam_width;
  g.beam.max_length = cfg.decode.max_length;
  g.beam.length_normalize = cfg.decode.length_normalize;
  g.threads = cfg.train.threads;
  g.attention_maps = attention;
  return g;
}

int evaluate_cmd(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
                 std::ostream& out) {
  const auto loaded = load_model(cfg, checkpoint);
  const auto examples = load_split(cfg, split);
  auto store = feature_store(cfg);
  const auto ev = evaluate(*loaded.model, loaded.info.vocab, store, examples,
                           generate_options(cfg, false));
  const fs::path dir = output_dir(cfg);
  write_text(dir / "report.txt", "# config: " + config_line(cfg) + "\n" + ev.report.table());
  const nlohmann::json j{{"config", to_json(cfg)},
                         {"checkpoint", loaded.path.string()},
                         {"split", split},
                         {"report", ev.report.to_json()}};
  write_text(dir / "report.json", j.dump(2) + "\n");
  out << ev.report.table();
  for (const auto& a : ev.answers)
    if (a.error) out << "skipped " << a.video_id << " turn " << a.turn << ": " << *a.error << '\n';
  return kExitOk;
}

int generate_cmd(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
                 bool attention, const std::string& out_path, std::ostream& out) {
  const auto loaded = load_model(cfg, checkpoint);
  const auto examples = load_split(cfg, split);
  auto store = feature_store(cfg);
  const auto answers = generate_answers(*loaded.model, loaded.info.vocab, store, examples,
                                        generate_options(cfg, attention));
  const fs::path path = out_path.empty() ? output_dir(cfg) / "answers.jsonl" : fs::path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << nlohmann::json{{"config", to_json(cfg)}, {"checkpoint", loaded.path.string()}}.dump()
    << '\n';
  std::size_t skipped = 0;
  for (const auto& a : answers) {
    nlohmann::json j{{"video_id", a.video_id}, {"turn", a.turn},     {"question", a.question},
                     {"reference", a.reference}, {"answer", a.answer}, {"log_prob", a.log_prob}};
    if (a.error) {
      j["error"] = *a.error;
      ++skipped;
    }
    if (attention && !a.attention.is_null()) j["attention"] = a.attention;
    f << j.dump() << '\n';
  }
  out << answers.size() - skipped << " answers, " << skipped << " skipped -> " << path.string()
      << '\n';
  return kExitOk;
}

int grad_check_cmd(std::uint64_t draw, double epsilon, std::ostream& out, std::ostream& err) {
  constexpr std::size_t kVocab = 9;
  const auto cfg = micro::micro_config();
  AvsdModel<double> model(cfg, kVocab);
  micro::randomize(model.parameters(), draw);
  const auto in = micro::micro_example<double>(cfg, kVocab, draw);
  const auto start = std::chrono::steady_clock::now();
  const auto r = grad_check([&](Graph<double>& g) { return model.example_loss(g, in); },
                            model.parameters(), epsilon);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "checked " << r.checked << " entries in " << fmt("%.1f", seconds) << " s\n"
      << "max relative error " << fmt("%.3e", r.max_relative_error) << " at "
      << r.worst_parameter << "[" << r.worst_index << "] (analytic "
      << fmt("%.6e", r.worst_analytic) << ", numeric " << fmt("%.6e", r.worst_numeric) << ")\n"
      << "max absolute error " << fmt("%.3e", r.max_abs_error) << '\n';
  if (!(r.max_relative_error < 1e-4)) {
    err << "error: gradient check failed, relative error above 1e-4\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int count_params_cmd(const RunConfig& cfg, std::size_t vocab_size, bool components,
                     std::ostream& out) {
  if (vocab_size == 0)
    vocab_size = !cfg.data.vocab.empty() && fs::exists(cfg.data.vocab)
                     ? Vocabulary::load(cfg.data.vocab).size()
                     : 1000;
  const AvsdModel<float> model(cfg.model, vocab_size);
  const auto c = count_parameters(model);
  out << "preset " << cfg.preset << ", vocabulary " << vocab_size << '\n';
  out << "total " << c.total << '\n';
  for (const auto& [name, n] : c.modules) out << "  " << name << ' ' << n << '\n';
  if (components)
    for (const auto& [name, n] : c.components) out << "    " << name << ' ' << n << '\n';
  return kExitOk;
}

int synth_data_cmd(const std::string& dir, std::size_t dialogs, std::size_t vocab_size,
                   std::uint64_t seed, std::ostream& out) {
  const auto data = make_synthetic(seed, dialogs, vocab_size);
  write_synthetic(data, dir);
  nlohmann::json cfg{{"preset", "full"},
                     {"data",
                      {{"train_dialogs", "dialogs.json"},
                       {"val_dialogs", "dialogs.json"},
                       {"test_dialogs", "dialogs.json"},
                       {"video_dir", "video"},
                       {"audio_dir", "audio"},
                       {"output_dir", "run"}}},
                     {"train", {{"min_count", 2}}}};
  write_text(fs::path(dir) / "config.json", cfg.dump(2) + "\n");
  out << dialogs << " dialogs, " << data.videos.size() << " videos -> " << dir << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual scene-aware answer generation"};
  app.name("avsd");
  app.require_subcommand(1);

  CommonOptions common;
  std::string out_path, checkpoint, split = "test";
  bool attention = false, components = false;
  std::uint64_t draw = 0, seed = 1;
  double epsilon = 1e-5;
  std::size_t vocab_size = 0, dialogs = 20, synth_vocab = 50;

  auto* vocab_cmd =
      app.add_subcommand("prepare-vocab", "build the vocabulary from training dialogs");
  add_common(vocab_cmd, common);
  vocab_cmd->add_option("-o,--out", out_path, "vocabulary file");

  auto* train_cmd = app.add_subcommand("train", "train and write a checkpoint and a CSV log");
  add_common(train_cmd, common);

  auto* eval_cmd = app.add_subcommand("evaluate", "generate answers and score them");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval_cmd->add_option("--split", split, "train, val or test")->capture_default_str();

  auto* gen_cmd = app.add_subcommand("generate", "write answers as JSON lines");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
  gen_cmd->add_option("--split", split, "train, val or test")->capture_default_str();
  gen_cmd->add_flag("--attention", attention, "include attention maps");
  gen_cmd->add_option("-o,--out", out_path, "output file");

  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of the micro-model");
  gc_cmd->add_option("--draw", draw, "parameter draw")->capture_default_str();
  gc_cmd->add_option("--epsilon", epsilon, "difference step")->capture_default_str();

  auto* count_cmd = app.add_subcommand("count-params", "print trainable parameter counts");
  add_common(count_cmd, common);
  count_cmd->add_option("--vocab-size", vocab_size,
                        "vocabulary size (default: vocab file or 1000)");
  count_cmd->add_flag("--components", components, "also print per-component counts");

  auto* synth_cmd = app.add_subcommand("synth-data", "write the planted-signal fixture");
  synth_cmd->add_option("-o,--out", out_path, "output directory")->required();
  synth_cmd->add_option("--dialogs", dialogs, "dialog count")->capture_default_str();
  synth_cmd->add_option("--vocab-size", synth_vocab, "vocabulary size")->capture_default_str();
  synth_cmd->add_option("--seed", seed, "seed")->capture_default_str();

  if (!args.empty() && !args[0].empty() && args[0][0] != '-' &&
      !app.get_subcommand_no_throw(args[0])) {
    err << "error: unknown command '" << args[0] << "'\n\n" << app.help();
    return kExitUsage;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto selected = app.get_subcommands();
    err << "error: " << e.what() << "\n\n"
        << (selected.empty() ? app.help() : selected.front()->help());
    return kExitUsage;
  }

  try {
    if (*gc_cmd) return grad_check_cmd(draw, epsilon, out, err);
    if (*synth_cmd) return synth_data_cmd(out_path, dialogs, synth_vocab, seed, out);
    const auto cfg = effective_config(common);
    if (*vocab_cmd) return prepare_vocab(cfg, out_path, out);
    if (*train_cmd) return train(cfg, out, err);
    if (*eval_cmd) return evaluate_cmd(cfg, checkpoint, split, out);
    if (*gen_cmd) return generate_cmd(cfg, checkpoint, split, attention, out_path, out);
    if (*count_cmd) return count_params_cmd(cfg, vocab_size, components, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace avsd
