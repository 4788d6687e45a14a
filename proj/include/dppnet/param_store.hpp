// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dppnet/tensor.hpp"

namespace dppnet {

enum class ParamRole {
  Static,             // trained directly (adapter, classifier, biases, bn gain/shift)
  DynamicProducing,   // prediction network: embedding, GRU, projection
  Buffer,             // running statistics; checkpointed but never optimised
};

const char* param_role_name(ParamRole role) noexcept;
ParamRole parse_param_role(std::string_view name);

template <typename T>
struct Param {
  std::string name;
  std::string group;
  ParamRole role = ParamRole::Static;
  bool frozen = false;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for buffers

  bool trainable() const noexcept { return role != ParamRole::Buffer && !frozen; }
};

/// Registry of named parameter tensors owned by a model. Entries keep
/// registration order, which is also the checkpoint order.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<T>& add(std::string name, std::string group, ParamRole role, Tensor<T>& value,
                Tensor<T>* grad);

  Param<T>* find(std::string_view name);
  const Param<T>* find(std::string_view name) const;
  Param<T>& at(std::string_view name);
  const Param<T>& at(std::string_view name) const;

  std::deque<Param<T>>& entries() noexcept { return entries_; }
  const std::deque<Param<T>>& entries() const noexcept { return entries_; }

  void zero_grad();
  void set_group_frozen(std::string_view group, bool frozen);
  bool group_frozen(std::string_view group) const;
  std::vector<std::string> frozen_names() const;

  /// Number of scalars in optimisable (non-buffer) parameters.
  std::size_t parameter_count() const;

  std::vector<Tensor<T>> snapshot() const;
  void restore(const std::vector<Tensor<T>>& values);

 private:
  std::deque<Param<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-5;
  // Gradient magnitudes below this are compared on an absolute scale.
  double magnitude_floor = 1e-4;
  bool include_frozen = true;
};

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = true;
  std::string failure;  // set when the loss went non-finite
  double max_rel_error() const;
};

/// Central-difference check of every registered tensor. `loss_fn(true)` must
/// return the loss and leave analytic gradients in the store; `loss_fn(false)`
/// only evaluates the loss.
GradCheckReport grad_check(ParamStore<double>& store,
                           const std::function<double(bool with_grad)>& loss_fn,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double magnitude_floor);

}  // namespace dppnet
