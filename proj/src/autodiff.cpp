#include "avsd/autodiff.hpp"

#include <cmath>

namespace avsd {

template <typename T>
typename ParameterSet<T>::Id ParameterSet<T>::add(std::string name, Shape shape,
                                                  ParamKind kind, std::size_t fan_in,
                                                  std::size_t fan_out) {
  AVSD_REQUIRE(!by_name_.contains(name), "duplicate parameter name: " + name);
  const Id id = params_.size();
  by_name_.emplace(name, id);
  params_.push_back(Parameter<T>{std::move(name), kind, Tensor<T>(std::move(shape)),
                                 fan_in, fan_out});
  return id;
}

template <typename T>
std::optional<typename ParameterSet<T>::Id> ParameterSet<T>::find(
    std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Gradients<T>::Gradients(const ParameterSet<T>& params) {
  grads_.reserve(params.size());
  for (const auto& p : params) grads_.emplace_back(p.value.shape());
}

template <typename T>
void Gradients<T>::zero() {
  for (auto& g : grads_) g.fill(T(0));
}

template <typename T>
void Gradients<T>::merge(const Gradients& other) {
  AVSD_REQUIRE(other.grads_.size() == grads_.size(), "gradient buffers differ in size");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = grads_[i].values();
    auto src = other.grads_[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
void Gradients<T>::scale(T factor) {
  for (auto& g : grads_)
    for (auto& v : g.values()) v *= factor;
}

template <typename T>
double Gradients<T>::global_norm() const {
  double sq = 0.0;
  for (const auto& g : grads_)
    for (auto v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::param(std::size_t id) {
  AVSD_REQUIRE(params_ != nullptr, "graph has no parameter set");
  AVSD_REQUIRE(id < params_->size(), "parameter id out of range");
  if (auto it = param_nodes_.find(id); it != param_nodes_.end())
    return Var<T>(this, it->second);
  Node node;
  node.ref = &(*params_)[id].value;
  node.param = id;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(id, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::vector<std::size_t> inputs,
                        BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (auto in : inputs) {
    AVSD_REQUIRE(in < nodes_.size(), "graph input id out of range");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Graph<T>::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.ref ? *node.ref : node.value;
}

template <typename T>
Tensor<T>& Graph<T>::grad(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = Tensor<T>(value(id).shape());
  return node.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss, Gradients<T>& out) {
  AVSD_REQUIRE(loss.graph() == this, "loss belongs to a different graph");
  AVSD_REQUIRE(loss.value().size() == 1, "backward requires a scalar loss, got shape " +
                                             shape_string(loss.value().shape()));
  for (auto& node : nodes_) node.grad = Tensor<T>();
  grad(loss.id())[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, id);
    if (node.param) {
      auto dst = out[*node.param].values();
      auto src = node.grad.values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Gradients<float>;
template class Gradients<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace avsd
