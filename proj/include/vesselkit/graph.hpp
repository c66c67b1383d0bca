#pragma once

// Define-by-run reverse-mode differentiation over dense 4-D tensors.
//
// A Graph records one node per operation in execution order, so every input
// precedes its consumer and a backward pass is a single reverse sweep. The graph
// is rebuilt for each forward pass; after backward() it must be reset() before
// it can record again. A Graph is single-writer.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vesselkit/params.hpp"
#include "vesselkit/tensor.hpp"

namespace vk {

template <typename T>
class Graph;

/// Handle to a node of a Graph.
template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Graph<T>;
  Var(Graph<T>* g, int id) : graph_(g), id_(id) {}

  Graph<T>* graph_ = nullptr;
  int id_ = -1;
};

/// Data handed to an op's backward rule. input_grads[i] is null when input i
/// does not require a gradient; rules accumulate into the non-null ones.
template <typename T>
struct BackwardContext {
  const Tensor<T>& output;
  const Tensor<T>& grad_output;
  std::vector<const Tensor<T>*> inputs;
  std::vector<Tensor<T>*> input_grads;
};

template <typename T>
using BackwardFn = std::function<void(BackwardContext<T>&)>;

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is kept on the node (read with grad()).
  Var<T> leaf(Tensor<T> value);
  /// Leaf bound to a model parameter; backward() accumulates into param.grad.
  Var<T> parameter(Parameter<T>& param);

  /// Appends an operation node. Ops call this; user code normally does not.
  Var<T> record(std::string op, const std::vector<Var<T>>& inputs, Tensor<T> value,
                BackwardFn<T> backward, std::uint64_t branch_hash = 0);

  void backward(Var<T> loss);
  void reset();

  const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  const Tensor<T>& grad(Var<T> v) const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(int id) const { return nodes_.at(id).op; }

  /// Distinct op kinds in first-seen order (leaves excluded).
  std::vector<std::string> op_kinds() const;

  /// When enabled, ops with non-smooth branches (gates, argmax, sign) hash their
  /// branch decisions so callers can detect when a perturbation crossed a kink.
  void set_track_branches(bool on) { track_branches_ = on; }
  bool track_branches() const { return track_branches_; }
  std::uint64_t branch_signature() const;

  /// Name and position of the first node holding a non-finite value.
  std::optional<std::string> first_non_finite() const;

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn<T> backward;
    std::uint64_t branch_hash = 0;
  };

  Var<T> push(Node node);
  void check_owned(Var<T> v) const;

  std::deque<Node> nodes_;  // stable addresses: Var::value() references survive growth
  bool consumed_ = false;
  bool track_branches_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(id_);
}

/// Incremental hash for branch decisions.
inline std::uint64_t mix_branch(std::uint64_t h, std::uint64_t bit) {
  return (h ^ bit) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL;
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace vk
