#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsd/layers.hpp"

namespace avsd {

/// One attended data source alpha of the factor graph.
struct ModalitySpec {
  std::string name;
  std::size_t dim = 0;        // d_alpha
  std::size_t prior_len = 0;  // |pi_alpha|; 0 disables the prior
  /// Modalities with the same nonempty group share V, L and R.
  std::string share_group;
};

struct ModalityParams {
  ParamId V = 0;      // [d_att x d_alpha]
  ParamId v = 0;      // [d_att]
  ParamId L = 0;      // [d_pair x d_alpha]
  ParamId R = 0;      // [d_pair x d_alpha]
  ParamId w = 0;      // [1] local-evidence weight
  ParamId w_hat = 0;  // [1] prior weight
  std::optional<ParamId> prior;
  std::size_t dim = 0;
};

struct AttentionLayout {
  std::vector<ModalitySpec> specs;
  std::vector<ModalityParams> modalities;
  ParamId pair = 0;  // w_{alpha,beta}, [|D| x |D|], row alpha scores alpha's entities
  std::size_t att_dim = 0;
  std::size_t pair_dim = 0;

  std::size_t size() const noexcept { return modalities.size(); }

  template <typename T>
  static AttentionLayout create(ParameterSet<T>& params, const std::string& prefix,
                                std::vector<ModalitySpec> specs, std::size_t att_dim,
                                std::size_t pair_dim);
};

/// Entities r_alpha as rows [n_alpha x d_alpha] plus their validity mask
/// (empty mask: all valid).
template <typename T>
struct AttentionInput {
  Var<T> entities;
  Mask mask;
};

template <typename T>
struct ModalityAttended {
  Var<T> local;     // l_alpha [n]
  Var<T> cross;     // c_alpha [n]
  Var<T> logits;    // w_hat pi + l + c [n]
  Var<T> probs;     // p_alpha [n]
  Var<T> attended;  // a_alpha [d_alpha]
  bool skipped = false;  // every entity masked: p = 0, a = 0
};

/// l(k) = w * v^T relu(V x_k).
template <typename T>
Var<T> local_evidence(Var<T> entities, Var<T> V, Var<T> v, Var<T> w);

/// c_alpha(k) = sum_beta w[alpha, beta] / n_beta * sum_j <L x_k / |L x_k|, R y_j / |R y_j|>
/// for every alpha, over the unmasked entities j of each beta (self term
/// included). A modality with no unmasked entity contributes nothing.
template <typename T>
std::vector<Var<T>> cross_evidence(std::span<const Var<T>> entities, std::span<const Mask> masks,
                                   std::span<const Var<T>> L, std::span<const Var<T>> R,
                                   Var<T> pair);

/// Masked softmax of w_hat * pi + l + c; a missing prior counts as zero.
/// Throws ContractError when every entity is masked.
template <typename T>
Var<T> attention_probs(const std::optional<Var<T>>& prior, Var<T> local, Var<T> cross,
                       Var<T> w_hat, MaskView mask = {});

/// a = sum_k p(k) x_k.
template <typename T>
Var<T> attend(Var<T> entities, Var<T> probs);

/// Prior logits cut or zero-extended to n entities.
template <typename T>
Var<T> fit_prior(Var<T> prior, std::size_t n);

/// Factor-graph attention over every modality of `layout`, in layout order.
template <typename T>
std::vector<ModalityAttended<T>> run_attention(Graph<T>& g, const AttentionLayout& layout,
                                               std::span<const AttentionInput<T>> inputs);

/// Attention-free baseline: the mean of the unmasked entities.
template <typename T>
Var<T> mean_attended(Var<T> entities, MaskView mask);

/// {modality name: [p(1), ..., p(n)]}.
template <typename T>
nlohmann::json attention_maps_json(const AttentionLayout& layout,
                                   std::span<const ModalityAttended<T>> attended);

/// sum_alpha (d_att*d_alpha + d_att + 2*d_pair*d_alpha + |pi_alpha|) + |D|^2 + 2|D|,
/// minus the shared V/L/R copies.
std::size_t attention_parameter_count(std::span<const ModalitySpec> specs, std::size_t att_dim,
                                      std::size_t pair_dim);

}  // namespace avsd
