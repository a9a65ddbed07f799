#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "avsd/attention.hpp"

namespace avsd::fixtures {

using Rng = std::mt19937_64;

inline Tensor<double> randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& x : t.values()) x = d(rng);
  return t;
}

struct Instance {
  ParameterSet<double> params;
  AttentionLayout layout;
  std::vector<Tensor<double>> entities;
  std::vector<Mask> masks;
};

// Random modality set; at most one modality may end up fully masked when
// allow_empty is set.
inline Instance random_instance(Rng& rng, bool allow_empty = false) {
  std::uniform_int_distribution<std::size_t> n_mod(2, 4), dim(2, 5), count(1, 6), plen(0, 7);
  Instance inst;
  std::vector<ModalitySpec> specs;
  const std::size_t n = n_mod(rng);
  for (std::size_t a = 0; a < n; ++a)
    specs.push_back({"m" + std::to_string(a), dim(rng), plen(rng), ""});
  inst.layout = AttentionLayout::create(inst.params, "att", specs, 3, 4);
  for (auto& p : inst.params) p.value = randn(p.value.shape(), rng);
  std::bernoulli_distribution keep(0.75);
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t k = count(rng);
    inst.entities.push_back(randn({k, specs[a].dim}, rng));
    Mask m(k, 1);
    for (auto& v : m) v = keep(rng) ? 1 : 0;
    if (std::count(m.begin(), m.end(), 1) == 0 && !(allow_empty && a == 0)) m[0] = 1;
    if (k > 1 && std::count(m.begin(), m.end(), 1) == std::ptrdiff_t(k) && keep(rng)) m.clear();
    inst.masks.push_back(std::move(m));
  }
  return inst;
}

struct Run {
  std::vector<std::vector<double>> local, cross, probs, attended;
  std::vector<bool> skipped;
};

inline Run run(const Instance& inst) {
  Graph<double> g(&inst.params);
  std::vector<AttentionInput<double>> in;
  for (std::size_t a = 0; a < inst.entities.size(); ++a)
    in.push_back({g.constant(inst.entities[a]), inst.masks[a]});
  auto out = run_attention<double>(g, inst.layout, in);
  Run r;
  auto vec = [](const Var<double>& v) {
    return std::vector<double>(v.value().values().begin(), v.value().values().end());
  };
  for (auto& m : out) {
    r.local.push_back(vec(m.local));
    r.cross.push_back(vec(m.cross));
    r.probs.push_back(vec(m.probs));
    r.attended.push_back(vec(m.attended));
    r.skipped.push_back(m.skipped);
  }
  return r;
}

inline bool valid(const Mask& m, std::size_t k) { return m.empty() || m[k]; }

}  // namespace avsd::fixtures
