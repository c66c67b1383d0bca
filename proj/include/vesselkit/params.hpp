#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vesselkit/tensor.hpp"

namespace vk {

enum class ParamRole {
  kConvWeight,  // covered by the L2 weight regularizer
  kBias,
  kNormScale,
  kNormShift,
  kVesselness,  // reparameterized beta / c
  kBuffer,      // persisted state that is not trained (running statistics)
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  ParamRole role = ParamRole::kConvWeight;

  bool trainable() const { return role != ParamRole::kBuffer; }
  bool regularized() const { return role == ParamRole::kConvWeight; }
  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Named, ordered collection of tensors owned by a model. Element addresses are
/// stable across moves so layers may keep raw pointers into it.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;
  ModelParams(ModelParams&&) noexcept = default;
  ModelParams& operator=(ModelParams&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> value, ParamRole role) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->value = std::move(value);
    p->role = role;
    p->zero_grad();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Parameter<T>* find(std::string_view name) {
    auto it = std::find_if(items_.begin(), items_.end(),
                           [&](const auto& p) { return p->name == name; });
    return it == items_.end() ? nullptr : it->get();
  }

  std::vector<Parameter<T>*> all() const {
    std::vector<Parameter<T>*> out;
    for (const auto& p : items_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter<T>*> trainable() const {
    std::vector<Parameter<T>*> out;
    for (const auto& p : items_) {
      if (p->trainable()) out.push_back(p.get());
    }
    return out;
  }

  std::size_t count_trainable() const {
    std::size_t total = 0;
    for (const auto& p : items_) {
      if (p->trainable()) total += p->value.size();
    }
    return total;
  }

  void zero_grad() {
    for (auto& p : items_) p->zero_grad();
  }

  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
};

/// Per-component trainable parameter counts.
struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> entries;

  void add(std::string name, std::size_t count) { entries.emplace_back(std::move(name), count); }
  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& [_, n] : entries) t += n;
    return t;
  }
};

template <typename T>
ParamBreakdown breakdown_of(const ModelParams<T>& params) {
  ParamBreakdown b;
  for (const auto* p : params.trainable()) b.add(p->name, p->value.size());
  return b;
}

}  // namespace vk
