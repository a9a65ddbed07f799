#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "avsd/tensor.hpp"

namespace avsd {

/// Role of a trainable tensor; drives initialization and fan computation.
enum class ParamKind {
  kWeight,     // [out x in] projection, fan_in = in
  kBias,       // zero-initialized
  kLstmBias,   // zero except forget gate = 1
  kEmbedding,  // [vocab x dim] lookup table
  kScalar,     // attention mixing weights (w, w_hat, w_pair)
  kPrior,      // positional log-prior logits
};

template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  Tensor<T> value;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

/// Flat, name-addressable collection of trainable tensors. Ids are stable
/// indices; graphs reference values in place, so no parameter may be added
/// while a graph built over the set is alive.
template <typename T>
class ParameterSet {
 public:
  using Id = std::size_t;

  Id add(std::string name, Shape shape, ParamKind kind, std::size_t fan_in = 0,
         std::size_t fan_out = 0);

  Parameter<T>& operator[](Id id) { return params_.at(id); }
  const Parameter<T>& operator[](Id id) const { return params_.at(id); }
  std::size_t size() const noexcept { return params_.size(); }
  std::optional<Id> find(std::string_view name) const;
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, Id> by_name_;
};

/// Dense gradient buffer aligned with a ParameterSet. One per worker; the
/// caller merges buffers before an optimizer step.
template <typename T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet<T>& params);

  Tensor<T>& operator[](std::size_t id) { return grads_.at(id); }
  const Tensor<T>& operator[](std::size_t id) const { return grads_.at(id); }
  std::size_t size() const noexcept { return grads_.size(); }

  void zero();
  void merge(const Gradients& other);
  void scale(T factor);
  double global_norm() const;

 private:
  std::vector<Tensor<T>> grads_;
};

template <typename T>
class Graph;

/// Handle to one node of a Graph.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::size_t id() const noexcept { return id_; }
  Graph<T>* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order, so the node list
/// is already topologically sorted. A graph is single-threaded; several
/// graphs may read the same ParameterSet concurrently.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(const ParameterSet<T>* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf bound to a trainable parameter. Repeated calls return the same node.
  Var<T> param(std::size_t id);

  /// Appends a primitive application. `fn` receives the node's own id and
  /// must accumulate into the gradients of the inputs that require them.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
  }

  /// Accumulates d(loss)/d(parameter) into `out` for every parameter leaf
  /// reachable from `loss`. Safe to call repeatedly on the same graph.
  void backward(Var<T> loss, Gradients<T>& out);

  std::size_t size() const noexcept { return nodes_.size(); }
  const ParameterSet<T>* parameters() const noexcept { return params_; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<std::size_t> param;
    bool requires_grad = false;
    Tensor<T> grad;
  };

  const ParameterSet<T>* params_;
  std::deque<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace avsd
