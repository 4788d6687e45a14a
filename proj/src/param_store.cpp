// SPDX-License-Identifier: Apache-2.0
#include "dppnet/param_store.hpp"

#include <algorithm>
#include <cmath>

namespace dppnet {

const char* param_role_name(ParamRole role) noexcept {
  switch (role) {
    case ParamRole::Static: return "static";
    case ParamRole::DynamicProducing: return "dynamic_producing";
    case ParamRole::Buffer: return "buffer";
  }
  return "static";
}

ParamRole parse_param_role(std::string_view name) {
  if (name == "static") return ParamRole::Static;
  if (name == "dynamic_producing") return ParamRole::DynamicProducing;
  if (name == "buffer") return ParamRole::Buffer;
  fail(ErrorCode::Format, "unknown parameter role '" + std::string(name) + "'");
}

template <typename T>
Param<T>& ParamStore<T>::add(std::string name, std::string group, ParamRole role,
                             Tensor<T>& value, Tensor<T>* grad) {
  require(!index_.contains(name), ErrorCode::InvalidArgument,
          "duplicate parameter name '" + name + "'");
  require(role == ParamRole::Buffer || grad != nullptr, ErrorCode::Internal,
          "parameter '" + name + "' registered without a gradient tensor");
  if (grad) require_same_shape(value, *grad, "parameter gradient");
  index_.emplace(name, entries_.size());
  Param<T> p;
  p.name = std::move(name);
  p.group = std::move(group);
  p.role = role;
  p.value = &value;
  p.grad = grad;
  entries_.push_back(std::move(p));
  return entries_.back();
}

template <typename T>
Param<T>* ParamStore<T>::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
const Param<T>* ParamStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
Param<T>& ParamStore<T>::at(std::string_view name) {
  Param<T>* p = find(name);
  require(p != nullptr, ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
  return *p;
}

template <typename T>
const Param<T>& ParamStore<T>::at(std::string_view name) const {
  const Param<T>* p = find(name);
  require(p != nullptr, ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
  return *p;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : entries_)
    if (p.grad) p.grad->set_zero();
}

template <typename T>
void ParamStore<T>::set_group_frozen(std::string_view group, bool frozen) {
  for (auto& p : entries_)
    if (p.group == group && p.role != ParamRole::Buffer) p.frozen = frozen;
}

template <typename T>
bool ParamStore<T>::group_frozen(std::string_view group) const {
  bool any = false;
  for (const auto& p : entries_) {
    if (p.group != group || p.role == ParamRole::Buffer) continue;
    any = true;
    if (!p.frozen) return false;
  }
  return any;
}

template <typename T>
std::vector<std::string> ParamStore<T>::frozen_names() const {
  std::vector<std::string> names;
  for (const auto& p : entries_)
    if (p.frozen) names.push_back(p.name);
  return names;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_)
    if (p.role != ParamRole::Buffer) n += p.value->size();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::snapshot() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& p : entries_) out.push_back(*p.value);
  return out;
}

template <typename T>
void ParamStore<T>::restore(const std::vector<Tensor<T>>& values) {
  require(values.size() == entries_.size(), ErrorCode::InvalidArgument,
          "snapshot has " + std::to_string(values.size()) + " tensors, store has " +
              std::to_string(entries_.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    require_same_shape(*entries_[i].value, values[i], "restore");
    *entries_[i].value = values[i];
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

double relative_error(double analytic, double numeric, double magnitude_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), magnitude_floor});
  return std::abs(analytic - numeric) / scale;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(ParamStore<double>& store,
                           const std::function<double(bool with_grad)>& loss_fn,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  store.zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) {
    report.passed = false;
    report.failure = "loss is not finite at the base point";
    return report;
  }
  // Analytic gradients are copied out first: the probing evaluations below
  // may overwrite the store's gradient tensors.
  std::vector<Tensor<double>> analytic;
  for (auto& p : store.entries()) analytic.push_back(p.grad ? *p.grad : Tensor<double>());

  const double h = options.epsilon;
  for (std::size_t idx = 0; idx < store.entries().size(); ++idx) {
    auto& p = store.entries()[idx];
    if (p.role == ParamRole::Buffer) continue;
    if (p.frozen && !options.include_frozen) continue;
    GradCheckEntry entry;
    entry.name = p.name;
    entry.count = p.value->size();
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      double& w = (*p.value)[i];
      const double saved = w;
      w = saved + h;
      const double plus = loss_fn(false);
      w = saved - h;
      const double minus = loss_fn(false);
      w = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        report.passed = false;
        report.failure = "loss became non-finite while probing '" + p.name + "'";
        entry.passed = false;
        break;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[idx][i];
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      entry.max_rel_error =
          std::max(entry.max_rel_error, relative_error(a, numeric, options.magnitude_floor));
    }
    if (entry.max_rel_error > options.tolerance) entry.passed = false;
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dppnet
