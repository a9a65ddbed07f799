#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsd/batch.hpp"
#include "avsd/config.hpp"
#include "avsd/model.hpp"
#include "avsd/text.hpp"

namespace avsd {

/// Worker threads: explicit value, else AVSD_THREADS, else 1.
std::size_t resolve_threads(std::size_t requested = 0);

/// Runs fn(i, worker) for i in [0, n) on `threads` workers; worker w handles a
/// contiguous block so results merged in worker order are deterministic.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t i, std::size_t worker)>& fn);

/// default: U(-0.08, 0.08); xavier: N(0, 2/(fan_in+fan_out)); he: N(0, 2/fan_in).
/// Biases start at zero except the LSTM forget gate (1), attention mixing
/// scalars at 1 and priors at 0. Each parameter draws from its own stream keyed
/// by seed and name.
template <typename T>
void init_weights(ParameterSet<T>& params, InitScheme scheme, std::uint64_t seed);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. Throws NumericError naming the parameter
/// when a gradient is not finite; nothing is updated in that case.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const AdamOptions& options);

/// Stops after `patience` consecutive epochs without a strictly lower
/// perplexity.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}
  /// Records the perplexity of the next epoch (1-based); true means stop.
  bool observe(double perplexity);
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }
  std::size_t epochs() const noexcept { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

struct LossTotals {
  double nll = 0.0;       // summed token negative log-likelihood
  std::size_t tokens = 0;

  double mean() const { return tokens ? nll / double(tokens) : 0.0; }
};

/// Token-level NLL of `examples` with dropout off and centered frames.
template <typename T>
LossTotals dataset_nll(const AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
                       std::span<const DialogExample> examples, std::size_t batch_size,
                       std::size_t threads = 1);

/// exp(mean token NLL). Throws ContractError on an empty dataset.
template <typename T>
double perplexity(const AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
                  std::span<const DialogExample> examples, std::size_t batch_size = 64,
                  std::size_t threads = 1);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_perplexity = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_perplexity = 0.0;
  bool stopped_early = false;
  bool reached_target = false;
  bool diverged = false;
  std::string message;
};

template <typename T>
struct FitHooks {
  /// Replaces the measured validation perplexity of an epoch.
  std::function<double(std::size_t epoch)> validation;
  std::function<void(const EpochRecord&, const ParameterSet<T>&)> on_epoch;
};

/// Seeded shuffle, batches, teacher-forced loss, backward, Adam; validation
/// perplexity after each epoch, early stopping, best parameters restored on
/// return. A non-finite loss or gradient aborts and keeps the last good
/// parameters.
template <typename T>
FitResult fit(AvsdModel<T>& model, const Vocabulary& vocab, FeatureStore& features,
              std::span<const DialogExample> train, std::span<const DialogExample> val,
              const TrainConfig& config, const FitHooks<T>& hooks = {});

/// One optimizer step on a batch; returns the batch's loss totals.
template <typename T>
LossTotals train_step(AvsdModel<T>& model, const Batch& batch, AdamState<T>& adam,
                      const TrainConfig& config, std::uint64_t dropout_seed, std::size_t threads);

struct CheckpointInfo {
  nlohmann::json config;
  std::size_t epoch = 0;
  double val_perplexity = 0.0;
  Vocabulary vocab;
};

/// Binary container of generic-tensor records (one per parameter, in set
/// order) plus `<path>.json` holding names, shapes and `info`.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const CheckpointInfo& info);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loads values into `params`; names and shapes must match exactly.
template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params);

struct ParameterCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> modules;
  std::map<std::string, std::size_t> components;
};

template <typename T>
ParameterCount count_parameters(const AvsdModel<T>& model);

}  // namespace avsd
