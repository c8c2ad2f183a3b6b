#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "difflm/nn/tensor.hpp"

namespace difflm::nn {

// Named parameters with gradient accumulators of identical shape. Iteration
// order is insertion order.
template <typename Real>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
  };

  void add(std::string name, Tensor<Real> value) {
    if (index_.count(name) != 0) {
      throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    Tensor<Real> grad(value.shape());
    entries_.push_back(Entry{std::move(name), std::move(value), std::move(grad)});
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  size_t index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
  }

  size_t size() const { return entries_.size(); }
  Entry& entry(size_t i) { return entries_.at(i); }
  const Entry& entry(size_t i) const { return entries_.at(i); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Tensor<Real>& value(std::string_view name) { return entries_[index(name)].value; }
  const Tensor<Real>& value(std::string_view name) const { return entries_[index(name)].value; }
  Tensor<Real>& grad(std::string_view name) { return entries_[index(name)].grad; }
  const Tensor<Real>& grad(std::string_view name) const { return entries_[index(name)].grad; }

  // Replaces a parameter's value; the gradient is reset to the new shape.
  void replace(std::string_view name, Tensor<Real> value) {
    Entry& e = entries_[index(name)];
    e.grad = Tensor<Real>(value.shape());
    e.value = std::move(value);
  }

  void zero_grad() {
    for (Entry& e : entries_) e.grad.fill(Real(0));
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

  template <typename To>
  ParameterStore<To> cast() const {
    ParameterStore<To> out;
    for (const Entry& e : entries_) out.add(e.name, e.value.template cast<To>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace difflm::nn
