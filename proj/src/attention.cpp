#include "avsd/attention.hpp"

#include <algorithm>
#include <map>

#include "avsd/error.hpp"

namespace avsd {

namespace {

bool all_masked(const Mask& mask) {
  return !mask.empty() && std::all_of(mask.begin(), mask.end(), [](auto m) { return m == 0; });
}

}  // namespace

template <typename T>
AttentionLayout AttentionLayout::create(ParameterSet<T>& params, const std::string& prefix,
                                        std::vector<ModalitySpec> specs, std::size_t att_dim,
                                        std::size_t pair_dim) {
  AVSD_REQUIRE(!specs.empty(), "attention needs at least one modality");
  AttentionLayout layout;
  layout.att_dim = att_dim;
  layout.pair_dim = pair_dim;
  std::map<std::string, std::pair<const ModalitySpec*, ModalityParams>> shared;
  for (const auto& spec : specs) {
    AVSD_REQUIRE(spec.dim > 0, "attention modality '" + spec.name + "' has zero width");
    const std::string base = prefix + "." + spec.name;
    ModalityParams m;
    m.dim = spec.dim;
    auto it = shared.find(spec.share_group);
    if (!spec.share_group.empty() && it != shared.end()) {
      AVSD_REQUIRE(it->second.first->dim == spec.dim,
                   "shared attention group '" + spec.share_group + "' mixes widths");
      m.V = it->second.second.V;
      m.L = it->second.second.L;
      m.R = it->second.second.R;
    } else {
      const std::string owner =
          spec.share_group.empty() ? base : prefix + "." + spec.share_group;
      m.V = params.add(owner + ".V", {att_dim, spec.dim}, ParamKind::kWeight, spec.dim, att_dim);
      m.L = params.add(owner + ".L", {pair_dim, spec.dim}, ParamKind::kWeight, spec.dim,
                       pair_dim);
      m.R = params.add(owner + ".R", {pair_dim, spec.dim}, ParamKind::kWeight, spec.dim,
                       pair_dim);
      if (!spec.share_group.empty()) shared.emplace(spec.share_group, std::pair{&spec, m});
    }
    m.v = params.add(base + ".v", {att_dim}, ParamKind::kWeight, att_dim, 1);
    m.w = params.add(base + ".w", {1}, ParamKind::kScalar);
    m.w_hat = params.add(base + ".w_hat", {1}, ParamKind::kScalar);
    if (spec.prior_len > 0)
      m.prior = params.add(base + ".prior", {spec.prior_len}, ParamKind::kPrior);
    layout.modalities.push_back(m);
  }
  const std::size_t n = specs.size();
  layout.pair = params.add(prefix + ".pair", {n, n}, ParamKind::kScalar);
  layout.specs = std::move(specs);
  return layout;
}

template <typename T>
Var<T> local_evidence(Var<T> entities, Var<T> V, Var<T> v, Var<T> w) {
  AVSD_REQUIRE(entities.shape().size() == 2, "local_evidence: entities must be [n x d]");
  AVSD_REQUIRE(V.shape().size() == 2 && V.shape()[1] == entities.shape()[1],
               "local_evidence: V " + shape_string(V.shape()) + " does not match entities " +
                   shape_string(entities.shape()));
  AVSD_REQUIRE(v.size() == V.shape()[0], "local_evidence: v does not match V");
  Var<T> hidden = ops::relu(ops::linear(entities, V));
  return ops::mul(ops::matmul(hidden, v), w);
}

template <typename T>
std::vector<Var<T>> cross_evidence(std::span<const Var<T>> entities, std::span<const Mask> masks,
                                   std::span<const Var<T>> L, std::span<const Var<T>> R,
                                   Var<T> pair) {
  const std::size_t n = entities.size();
  AVSD_REQUIRE(masks.size() == n && L.size() == n && R.size() == n,
               "cross_evidence: one mask, L and R per modality required");
  AVSD_REQUIRE(pair.shape() == (Shape{n, n}), "cross_evidence: pair weights must be [|D| x |D|]");
  std::vector<Var<T>> means;
  means.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    AVSD_REQUIRE(R[b].shape().size() == 2 && R[b].shape()[1] == entities[b].shape()[1],
                 "cross_evidence: R does not match entity width");
    Var<T> right = ops::l2_normalize(ops::linear(entities[b], R[b]));
    means.push_back(ops::mean_rows(right, MaskView(masks[b])));
  }
  Var<T> mean_matrix = ops::stack_rows<T>(means);  // [|D| x d_pair]
  std::vector<Var<T>> out;
  out.reserve(n);
  for (std::size_t a = 0; a < n; ++a) {
    AVSD_REQUIRE(L[a].shape().size() == 2 && L[a].shape()[1] == entities[a].shape()[1],
                 "cross_evidence: L does not match entity width");
    Var<T> left = ops::l2_normalize(ops::linear(entities[a], L[a]));
    Var<T> cosines = ops::matmul(left, mean_matrix, false, true);  // [n_a x |D|]
    out.push_back(ops::matmul(cosines, ops::row(pair, a)));
  }
  return out;
}

template <typename T>
Var<T> fit_prior(Var<T> prior, std::size_t n) {
  const std::size_t len = prior.size();
  if (n == len) return prior;
  if (n < len) return ops::slice(prior, 0, n);
  Graph<T>& g = *prior.graph();
  std::vector<Var<T>> parts{prior, zeros(g, n - len)};
  return ops::concat<T>(parts);
}

template <typename T>
Var<T> attention_probs(const std::optional<Var<T>>& prior, Var<T> local, Var<T> cross,
                       Var<T> w_hat, MaskView mask) {
  AVSD_REQUIRE(local.shape() == cross.shape(), "attention_probs: l and c differ in length");
  Var<T> logits = ops::add(local, cross);
  if (prior) {
    AVSD_REQUIRE(prior->shape() == local.shape(), "attention_probs: prior length mismatch");
    logits = ops::add(logits, ops::mul(*prior, w_hat));
  }
  return ops::softmax(logits, mask);
}

template <typename T>
Var<T> attend(Var<T> entities, Var<T> probs) {
  AVSD_REQUIRE(entities.shape().size() == 2 && probs.size() == entities.shape()[0],
               "attend: probabilities do not match entity count");
  return ops::matmul(entities, probs, true);
}

template <typename T>
Var<T> mean_attended(Var<T> entities, MaskView mask) {
  return ops::mean_rows(entities, mask);
}

template <typename T>
std::vector<ModalityAttended<T>> run_attention(Graph<T>& g, const AttentionLayout& layout,
                                               std::span<const AttentionInput<T>> inputs) {
  const std::size_t n = layout.size();
  AVSD_REQUIRE(inputs.size() == n, "run_attention: expected " + std::to_string(n) +
                                       " modalities, got " + std::to_string(inputs.size()));
  std::vector<Var<T>> entities, L, R;
  std::vector<Mask> masks;
  for (std::size_t a = 0; a < n; ++a) {
    const auto& x = inputs[a].entities;
    AVSD_REQUIRE(x.shape().size() == 2 && x.shape()[1] == layout.modalities[a].dim,
                 "run_attention: modality '" + layout.specs[a].name + "' expects width " +
                     std::to_string(layout.modalities[a].dim) + ", got " +
                     shape_string(x.shape()));
    AVSD_REQUIRE(inputs[a].mask.empty() || inputs[a].mask.size() == x.shape()[0],
                 "run_attention: mask length mismatch for '" + layout.specs[a].name + "'");
    entities.push_back(x);
    masks.push_back(inputs[a].mask);
    L.push_back(g.param(layout.modalities[a].L));
    R.push_back(g.param(layout.modalities[a].R));
  }
  const auto cross = cross_evidence<T>(entities, masks, L, R, g.param(layout.pair));

  std::vector<ModalityAttended<T>> out(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& m = layout.modalities[a];
    auto& r = out[a];
    const std::size_t count = entities[a].shape()[0];
    r.cross = cross[a];
    if (all_masked(masks[a])) {
      r.skipped = true;
      r.local = zeros(g, count);
      r.logits = r.local;
      r.probs = zeros(g, count);
      r.attended = zeros(g, m.dim);
      continue;
    }
    r.local = local_evidence(entities[a], g.param(m.V), g.param(m.v), g.param(m.w));
    std::optional<Var<T>> prior;
    if (m.prior) prior = fit_prior(g.param(*m.prior), count);
    Var<T> w_hat = g.param(m.w_hat);
    r.logits = ops::add(r.local, r.cross);
    if (prior) r.logits = ops::add(r.logits, ops::mul(*prior, w_hat));
    r.probs = ops::softmax(r.logits, MaskView(masks[a]));
    r.attended = attend(entities[a], r.probs);
  }
  return out;
}

template <typename T>
nlohmann::json attention_maps_json(const AttentionLayout& layout,
                                   std::span<const ModalityAttended<T>> attended) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t a = 0; a < attended.size() && a < layout.size(); ++a) {
    const auto& p = attended[a].probs.value();
    j[layout.specs[a].name] = std::vector<double>(p.values().begin(), p.values().end());
  }
  return j;
}

std::size_t attention_parameter_count(std::span<const ModalitySpec> specs, std::size_t att_dim,
                                      std::size_t pair_dim) {
  std::size_t total = 0;
  std::map<std::string, bool> seen;
  for (const auto& s : specs) {
    const bool owns = s.share_group.empty() || !seen[s.share_group];
    if (!s.share_group.empty()) seen[s.share_group] = true;
    if (owns) total += att_dim * s.dim + 2 * pair_dim * s.dim;
    total += att_dim + s.prior_len;
  }
  const std::size_t d = specs.size();
  return total + d * d + 2 * d;
}

#define AVSD_INSTANTIATE_ATTENTION(T)                                                          \
  template AttentionLayout AttentionLayout::create(ParameterSet<T>&, const std::string&,       \
                                                   std::vector<ModalitySpec>, std::size_t,     \
                                                   std::size_t);                               \
  template Var<T> local_evidence(Var<T>, Var<T>, Var<T>, Var<T>);                              \
  template std::vector<Var<T>> cross_evidence(std::span<const Var<T>>, std::span<const Mask>,  \
                                              std::span<const Var<T>>,                         \
                                              std::span<const Var<T>>, Var<T>);                \
  template Var<T> fit_prior(Var<T>, std::size_t);                                              \
  template Var<T> attention_probs(const std::optional<Var<T>>&, Var<T>, Var<T>, Var<T>,        \
                                  MaskView);                                                   \
  template Var<T> attend(Var<T>, Var<T>);                                                      \
  template Var<T> mean_attended(Var<T>, MaskView);                                             \
  template std::vector<ModalityAttended<T>> run_attention(Graph<T>&, const AttentionLayout&,   \
                                                          std::span<const AttentionInput<T>>); \
  template nlohmann::json attention_maps_json(const AttentionLayout&,                          \
                                              std::span<const ModalityAttended<T>>);

AVSD_INSTANTIATE_ATTENTION(float)
AVSD_INSTANTIATE_ATTENTION(double)

}  // namespace avsd
