#include "avsd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "avsd/error.hpp"
#include "avsd/feature_file.hpp"
#include "avsd/random.hpp"

namespace avsd {

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("AVSD_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && n > 0) return std::size_t(n);
  }
  return 1;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    const std::size_t lo = n * w / threads, hi = n * (w + 1) / threads;
    pool.emplace_back([&, w, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::vector<Tensor<T>> snapshot(const ParameterSet<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

template <typename T>
void restore(ParameterSet<T>& params, const std::vector<Tensor<T>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = values[i];
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

}  // namespace

template <typename T>
void init_weights(ParameterSet<T>& params, InitScheme scheme, std::uint64_t seed) {
  for (auto& p : params) {
    std::mt19937_64 rng(derive_seed(seed, name_hash(p.name)));
    auto& v = p.value;
    switch (p.kind) {
      case ParamKind::kBias: v.fill(T(0)); continue;
      case ParamKind::kScalar: v.fill(T(1)); continue;
      case ParamKind::kPrior: v.fill(T(0)); continue;
      case ParamKind::kLstmBias: {
        v.fill(T(0));
        const std::size_t h = v.size() / 4;
        for (std::size_t j = h; j < 2 * h; ++j) v[j] = T(1);
        continue;
      }
      case ParamKind::kWeight: case ParamKind::kEmbedding: break;
    }
    switch (scheme) {
      case InitScheme::kDefault: {
        std::uniform_real_distribution<double> d(-0.08, 0.08);
        for (auto& x : v.values()) x = T(d(rng));
        break;
      }
      case InitScheme::kXavier: {
        AVSD_REQUIRE(p.fan_in + p.fan_out > 0, "init_weights: " + p.name + " has no fan");
        std::normal_distribution<double> d(0.0, std::sqrt(2.0 / double(p.fan_in + p.fan_out)));
        for (auto& x : v.values()) x = T(d(rng));
        break;
      }
      case InitScheme::kHe: {
        AVSD_REQUIRE(p.fan_in > 0, "init_weights: " + p.name + " has no fan_in");
        std::normal_distribution<double> d(0.0, std::sqrt(2.0 / double(p.fan_in)));
        for (auto& x : v.values()) x = T(d(rng));
        break;
      }
      default:
        throw ContractError("init_weights: unknown scheme");
    }
  }
}

template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const AdamOptions& o) {
  AVSD_REQUIRE(grads.size() == params.size(), "adam_step: gradient buffer does not match");
  AVSD_REQUIRE(o.learning_rate > 0 && o.epsilon > 0, "adam_step: invalid hyperparameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    AVSD_REQUIRE(grads[i].shape() == params[i].value.shape(),
                 "adam_step: shape mismatch for " + params[i].name);
    if (!grads[i].all_finite())
      throw NumericError("non-finite gradient in parameter " + params[i].name);
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = double(g[k]);
      const double mk = o.beta1 * double(m[k]) + (1.0 - o.beta1) * gk;
      const double vk = o.beta2 * double(v[k]) + (1.0 - o.beta2) * gk * gk;
      m[k] = T(mk);
      v[k] = T(vk);
      w[k] = T(double(w[k]) - o.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + o.epsilon));
    }
  }
}

bool EarlyStopper::observe(double perplexity) {
  ++epoch_;
  if (epoch_ == 1 || perplexity < best_) {
    best_ = perplexity;
    best_epoch_ = epoch_;
    bad_ = 0;
    improved_ = true;
  } else {
    ++bad_;
    improved_ = false;
  }
  return patience_ > 0 && bad_ >= patience_;
}

template <typename T>
LossTotals dataset_nll(const AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
                       std::span<const DialogExample> examples, std::size_t batch_size,
                       std::size_t threads) {
  AVSD_REQUIRE(batch_size > 0, "dataset_nll: batch_size must be positive");
  threads = resolve_threads(threads);
  LossTotals total;
  BatchOptions opts;
  opts.frames = model.config().frames;
  opts.mode = SampleMode::kEval;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const auto chunk = examples.subspan(start, std::min(batch_size, examples.size() - start));
    const Batch batch = make_batch(chunk, vocab, features, opts);
    std::vector<double> nll(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t b, std::size_t) {
      const auto input = example_from_batch<T>(batch, b);
      Graph<T> g(&model.parameters());
      nll[b] = double(model.example_loss(g, input, {}, Reduction::kSum).value()[0]);
    });
    for (std::size_t b = 0; b < batch.size(); ++b) {
      total.nll += nll[b];
      total.tokens += batch.answer_targets.lengths[b];
    }
  }
  return total;
}

template <typename T>
double perplexity(const AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
                  std::span<const DialogExample> examples, std::size_t batch_size,
                  std::size_t threads) {
  AVSD_REQUIRE(!examples.empty(), "perplexity: empty dataset");
  const auto t = dataset_nll(model, vocab, features, examples, batch_size, threads);
  return std::exp(t.mean());
}

template <typename T>
LossTotals train_step(AvsdModel<T>& model, const Batch& batch, AdamState<T>& adam,
                      const TrainConfig& config, std::uint64_t dropout_seed, std::size_t threads) {
  auto& params = model.parameters();
  const std::size_t n = batch.size();
  AVSD_REQUIRE(n > 0, "train_step: empty batch");
  threads = std::max<std::size_t>(1, std::min(resolve_threads(threads), n));

  std::vector<Gradients<T>> grads;
  grads.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) grads.emplace_back(params);
  std::vector<double> nll(n);
  parallel_for(n, threads, [&](std::size_t b, std::size_t w) {
    const auto input = example_from_batch<T>(batch, b);
    std::mt19937_64 rng(derive_seed(dropout_seed, b));
    const Dropout dropout{model.config().dropout, &rng};
    Graph<T> g(&params);
    Var<T> loss = model.example_loss(g, input, dropout, Reduction::kSum);
    nll[b] = double(loss.value()[0]);
    g.backward(loss, grads[w]);
  });

  LossTotals totals;
  for (std::size_t b = 0; b < n; ++b) {
    totals.nll += nll[b];
    totals.tokens += batch.answer_targets.lengths[b];
  }
  if (!std::isfinite(totals.nll)) throw NumericError("non-finite training loss");
  for (std::size_t w = 1; w < threads; ++w) grads[0].merge(grads[w]);
  grads[0].scale(T(1.0 / double(totals.tokens)));
  if (config.clip_norm > 0) {
    const double norm = grads[0].global_norm();
    if (norm > config.clip_norm) grads[0].scale(T(config.clip_norm / norm));
  }
  adam_step(params, grads[0], adam,
            {config.learning_rate, config.beta1, config.beta2, config.adam_epsilon});
  return totals;
}

template <typename T>
FitResult fit(AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
              std::span<const DialogExample> train, std::span<const DialogExample> val,
              const TrainConfig& config, const FitHooks<T>& hooks) {
  AVSD_REQUIRE(!train.empty(), "fit: empty training set");
  AVSD_REQUIRE(config.batch_size > 0, "fit: batch_size must be positive");
  using clock = std::chrono::steady_clock;
  auto& params = model.parameters();
  const std::size_t threads = resolve_threads(config.threads);

  FitResult result;
  EarlyStopper stopper(config.patience);
  AdamState<T> adam;
  std::vector<Tensor<T>> best;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  const bool validate_each = hooks.validation || !val.empty();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = clock::now();
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 0x5348u, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossTotals epoch_loss;
    try {
      std::size_t step = 0;
      for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size, ++step) {
        const std::size_t hi = std::min(order.size(), lo + config.batch_size);
        std::vector<DialogExample> chunk;
        chunk.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) chunk.push_back(train[order[i]]);
        BatchOptions opts;
        opts.frames = model.config().frames;
        opts.mode = SampleMode::kTrain;
        opts.seed = derive_seed(config.seed, 0x4652u, epoch, step);
        const Batch batch = make_batch(chunk, vocab, features, opts);
        const auto t = train_step(model, batch, adam, config,
                                  derive_seed(config.seed, 0x4452u, epoch, step), threads);
        epoch_loss.nll += t.nll;
        epoch_loss.tokens += t.tokens;
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.message = "diverged in epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss.mean();
    if (hooks.validation)
      rec.val_perplexity = hooks.validation(epoch);
    else if (!val.empty())
      rec.val_perplexity = perplexity(model, vocab, features, val, config.batch_size, threads);
    else
      rec.val_perplexity = std::numeric_limits<double>::quiet_NaN();
    rec.seconds = std::chrono::duration<double>(clock::now() - start).count();
    result.history.push_back(rec);

    bool stop = false;
    if (validate_each) {
      stop = stopper.observe(rec.val_perplexity);
      if (stopper.improved()) {
        best = snapshot(params);
        result.best_epoch = epoch;
        result.best_val_perplexity = rec.val_perplexity;
      }
    } else {
      result.best_epoch = epoch;
      result.best_val_perplexity = rec.val_perplexity;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec, params);
    if (stop) {
      result.stopped_early = true;
      result.message = "no improvement for " + std::to_string(config.patience) + " epochs";
      break;
    }
    if (config.target_train_loss > 0 && rec.train_loss < config.target_train_loss) {
      result.reached_target = true;
      result.message = "training loss below target";
      break;
    }
  }
  if (!best.empty()) restore(params, best);
  return result;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const CheckpointInfo& info) {
  std::vector<std::byte> bytes;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& p : params) {
    append_record(bytes, p.value, Modality::kTensor);
    entries.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_bytes(path, bytes);

  nlohmann::json manifest;
  manifest["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  manifest["parameters"] = std::move(entries);
  manifest["config"] = info.config;
  manifest["epoch"] = info.epoch;
  if (std::isfinite(info.val_perplexity))
    manifest["val_perplexity"] = info.val_perplexity;
  else
    manifest["val_perplexity"] = nullptr;
  manifest["vocab"] = info.vocab.to_json();
  std::ofstream out(manifest_path(path));
  if (!out) throw DataError("cannot write " + manifest_path(path).string());
  out << manifest.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto mpath = manifest_path(path);
  std::ifstream in(mpath);
  if (!in) throw DataError("cannot read checkpoint manifest " + mpath.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(mpath.string() + ": " + e.what());
  }
  CheckpointInfo info;
  try {
    info.config = m.at("config");
    info.epoch = m.at("epoch").get<std::size_t>();
    const auto& ppl = m.at("val_perplexity");
    info.val_perplexity =
        ppl.is_null() ? std::numeric_limits<double>::quiet_NaN() : ppl.get<double>();
    info.vocab = Vocabulary::from_json(m.at("vocab"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(mpath.string() + ": " + e.what());
  }
  return info;
}

template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params) {
  auto info = read_checkpoint_info(path);
  const auto bytes = read_bytes(path);
  std::ifstream in(manifest_path(path));
  const auto manifest = nlohmann::json::parse(in);
  const auto& entries = manifest.at("parameters");
  if (entries.size() != params.size())
    throw DataError("checkpoint holds " + std::to_string(entries.size()) +
                    " parameters, model has " + std::to_string(params.size()));
  std::size_t pos = 0;
  std::vector<Tensor<T>> values;
  values.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = entries[i].at("name").get<std::string>();
    if (name != params[i].name)
      throw DataError("checkpoint parameter " + std::to_string(i) + " is " + name +
                      ", expected " + params[i].name);
    Modality modality{};
    auto t = decode_record<T>(bytes, pos, &modality);
    if (modality != Modality::kTensor || t.shape() != params[i].value.shape())
      throw DataError("checkpoint shape mismatch for " + name + ": " + shape_string(t.shape()) +
                      " vs " + shape_string(params[i].value.shape()));
    values.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw DataError("trailing bytes in checkpoint " + path.string());
  restore(params, values);
  return info;
}

template <typename T>
ParameterCount count_parameters(const AvsdModel<T>& model) {
  ParameterCount c;
  c.total = model.parameters().scalar_count();
  c.modules = model.parameter_breakdown(false);
  c.components = model.parameter_breakdown(true);
  return c;
}

#define AVSD_INSTANTIATE_TRAINING(T)                                                           \
  template void init_weights(ParameterSet<T>&, InitScheme, std::uint64_t);                     \
  template void adam_step(ParameterSet<T>&, const Gradients<T>&, AdamState<T>&,                \
                          const AdamOptions&);                                                 \
  template LossTotals dataset_nll(const AvsdModel<T>&, const Vocabulary&, FeatureStore&,       \
                                  std::span<const DialogExample>, std::size_t, std::size_t);   \
  template double perplexity(const AvsdModel<T>&, const Vocabulary&, FeatureStore&,            \
                             std::span<const DialogExample>, std::size_t, std::size_t);        \
  template LossTotals train_step(AvsdModel<T>&, const Batch&, AdamState<T>&,                   \
                                 const TrainConfig&, std::uint64_t, std::size_t);              \
  template FitResult fit(AvsdModel<T>&, const Vocabulary&, FeatureStore&,                      \
                         std::span<const DialogExample>, std::span<const DialogExample>,       \
                         const TrainConfig&, const FitHooks<T>&);                              \
  template void save_checkpoint(const std::filesystem::path&, const ParameterSet<T>&,          \
                                const CheckpointInfo&);                                        \
  template CheckpointInfo load_checkpoint(const std::filesystem::path&, ParameterSet<T>&);     \
  template ParameterCount count_parameters(const AvsdModel<T>&);

AVSD_INSTANTIATE_TRAINING(float)
AVSD_INSTANTIATE_TRAINING(double)

}  // namespace avsd
