#include "avsd/layers.hpp"

namespace avsd {

template <typename T>
Linear Linear::create(ParameterSet<T>& params, const std::string& name, std::size_t in,
                      std::size_t out, bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  l.weight = params.add(name + ".weight", {out, in}, ParamKind::kWeight, in, out);
  if (bias) l.bias = params.add(name + ".bias", {out}, ParamKind::kBias, in, out);
  return l;
}

template <typename T>
Var<T> Linear::operator()(Graph<T>& g, Var<T> x) const {
  Var<T> w = g.param(weight);
  if (!has_bias) return ops::linear(x, w);
  Var<T> b = g.param(bias);
  return ops::linear(x, w, &b);
}

template <typename T>
LstmLayer LstmLayer::create(ParameterSet<T>& params, const std::string& name, std::size_t in,
                            std::size_t hidden) {
  LstmLayer l;
  l.in = in;
  l.hidden = hidden;
  l.input_weights =
      params.add(name + ".input_weights", {4 * hidden, in}, ParamKind::kWeight, in, hidden);
  l.hidden_weights = params.add(name + ".hidden_weights", {4 * hidden, hidden},
                                ParamKind::kWeight, hidden, hidden);
  l.bias = params.add(name + ".bias", {4 * hidden}, ParamKind::kLstmBias, in, hidden);
  return l;
}

template <typename T>
LstmCellParams<T> LstmLayer::bind(Graph<T>& g) const {
  return {g.param(input_weights), g.param(hidden_weights), g.param(bias)};
}

template <typename T>
LstmState<T> LstmLayer::zero_state(Graph<T>& g) const {
  return {zeros(g, hidden), zeros(g, hidden)};
}

template <typename T>
std::vector<Var<T>> LstmLayer::run(Graph<T>& g, std::span<const Var<T>> inputs,
                                   const LstmState<T>* initial, LstmState<T>* final) const {
  const auto p = bind(g);
  LstmState<T> s = initial ? *initial : zero_state(g);
  std::vector<Var<T>> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) {
    s = ops::lstm_cell(x, s, p);
    out.push_back(s.h);
  }
  if (final) *final = s;
  return out;
}

template <typename T>
Var<T> zeros(Graph<T>& g, std::size_t n) {
  return g.constant(Tensor<T>({n}));
}

#define AVSD_INSTANTIATE_LAYERS(T)                                                           \
  template Linear Linear::create(ParameterSet<T>&, const std::string&, std::size_t,          \
                                 std::size_t, bool);                                         \
  template Var<T> Linear::operator()(Graph<T>&, Var<T>) const;                               \
  template LstmLayer LstmLayer::create(ParameterSet<T>&, const std::string&, std::size_t,    \
                                       std::size_t);                                         \
  template LstmCellParams<T> LstmLayer::bind(Graph<T>&) const;                               \
  template LstmState<T> LstmLayer::zero_state(Graph<T>&) const;                              \
  template std::vector<Var<T>> LstmLayer::run(Graph<T>&, std::span<const Var<T>>,            \
                                              const LstmState<T>*, LstmState<T>*) const;     \
  template Var<T> zeros(Graph<T>&, std::size_t);

AVSD_INSTANTIATE_LAYERS(float)
AVSD_INSTANTIATE_LAYERS(double)

}  // namespace avsd
