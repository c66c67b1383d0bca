#include "vesselkit/graph.hpp"

#include <algorithm>
#include <cmath>

namespace vk {

template <typename T>
Var<T> Graph<T>::push(Node node) {
  if (consumed_) {
    throw StateError("graph was consumed by backward(); call reset() before recording");
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
void Graph<T>::check_owned(Var<T> v) const {
  if (v.graph() != this || v.id() < 0 || v.id() >= static_cast<int>(nodes_.size())) {
    throw StateError("variable does not belong to this graph");
  }
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::parameter(Parameter<T>& param) {
  Node n;
  n.op = "parameter";
  n.value = param.value;
  n.requires_grad = param.trainable();
  n.param = &param;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(std::string op, const std::vector<Var<T>>& inputs, Tensor<T> value,
                        BackwardFn<T> backward, std::uint64_t branch_hash) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.branch_hash = branch_hash;
  for (const auto& v : inputs) {
    check_owned(v);
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (nodes_.empty()) throw StateError("backward() called before any forward pass");
  if (consumed_) throw StateError("backward() already ran on this graph; call reset() first");
  check_owned(loss);
  auto& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ConfigError("backward() requires a scalar loss, got shape " + root.value.shape().str());
  }
  consumed_ = true;
  if (!root.requires_grad) return;

  root.grad = Tensor<T>(root.value.shape(), T{1});
  for (int i = loss.id(); i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    BackwardContext<T> ctx{node.value, node.grad, {}, {}};
    for (int in : node.inputs) {
      Node& src = nodes_[in];
      ctx.inputs.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Tensor<T>(src.value.shape());
        ctx.input_grads.push_back(&src.grad);
      } else {
        ctx.input_grads.push_back(nullptr);
      }
    }
    node.backward(ctx);
  }
  for (Node& node : nodes_) {
    if (node.param == nullptr || node.grad.empty()) continue;
    Tensor<T>& g = node.param->grad;
    if (g.shape() != node.grad.shape()) g = Tensor<T>(node.grad.shape());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += node.grad[k];
  }
}

template <typename T>
void Graph<T>::reset() {
  nodes_.clear();
  consumed_ = false;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var<T> v) const {
  check_owned(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) throw StateError("no gradient recorded for node '" + n.op + "'");
  return n.grad;
}

template <typename T>
std::vector<std::string> Graph<T>::op_kinds() const {
  std::vector<std::string> kinds;
  for (const Node& n : nodes_) {
    if (n.op == "constant" || n.op == "leaf" || n.op == "parameter") continue;
    if (std::find(kinds.begin(), kinds.end(), n.op) == kinds.end()) kinds.push_back(n.op);
  }
  return kinds;
}

template <typename T>
std::uint64_t Graph<T>::branch_signature() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Node& n : nodes_) h = mix_branch(h, n.branch_hash);
  return h;
}

template <typename T>
std::optional<std::string> Graph<T>::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    for (std::size_t k = 0; k < n.value.size(); ++k) {
      if (!std::isfinite(n.value[k])) {
        std::string where = n.param != nullptr ? " (parameter " + n.param->name + ")" : "";
        return "op '" + n.op + "'" + where + " at node " + std::to_string(i) + ", element " +
               std::to_string(k);
      }
    }
  }
  return std::nullopt;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace vk
