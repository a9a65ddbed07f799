#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "avsd/ops.hpp"

namespace avsd {

using ParamId = std::size_t;

/// Dropout switch threaded through a forward pass; inactive without an rng.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const noexcept { return rng != nullptr && rate > 0.0; }
  template <typename T>
  Var<T> operator()(Var<T> x) const {
    return active() ? ops::dropout(x, rate, *rng) : x;
  }
};

/// Affine map y = W x + b, W [out x in]. Applied to the rows of a matrix it is
/// a pointwise 1-D convolution.
struct Linear {
  ParamId weight = 0;
  ParamId bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  bool has_bias = true;

  template <typename T>
  static Linear create(ParameterSet<T>& params, const std::string& name, std::size_t in,
                       std::size_t out, bool bias = true);
  template <typename T>
  Var<T> operator()(Graph<T>& g, Var<T> x) const;
};

struct LstmLayer {
  ParamId input_weights = 0;
  ParamId hidden_weights = 0;
  ParamId bias = 0;
  std::size_t in = 0;
  std::size_t hidden = 0;

  template <typename T>
  static LstmLayer create(ParameterSet<T>& params, const std::string& name, std::size_t in,
                          std::size_t hidden);
  template <typename T>
  LstmCellParams<T> bind(Graph<T>& g) const;
  template <typename T>
  LstmState<T> zero_state(Graph<T>& g) const;
  /// Runs the layer over `inputs` from `initial` (zero state when null) and
  /// returns every hidden state; `final` receives the last (h, c).
  template <typename T>
  std::vector<Var<T>> run(Graph<T>& g, std::span<const Var<T>> inputs,
                          const LstmState<T>* initial = nullptr,
                          LstmState<T>* final = nullptr) const;
};

/// Zero vector constant.
template <typename T>
Var<T> zeros(Graph<T>& g, std::size_t n);

}  // namespace avsd
