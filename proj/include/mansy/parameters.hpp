#pragma once

#include "mansy/autodiff.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mansy {

/// Named trainable matrices plus their gradient buffers, in insertion order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    ad::Matrix<T> value;
    ad::Matrix<T> grad;
  };

  std::size_t add(const std::string& name, ad::Matrix<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({name, std::move(init), {}});
    return entries_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  ad::Matrix<T>& value(const std::string& name) { return entries_[index(name)].value; }
  const ad::Matrix<T>& value(const std::string& name) const { return entries_[index(name)].value; }

  /// Leaf bound to the named parameter; gradients accumulate into its buffer.
  ad::Var<T> bind(ad::Tape<T>& tape, const std::string& name) {
    Entry& e = entries_[index(name)];
    return tape.leaf(e.value, &e.grad);
  }

  /// Leaf that reads the parameter but never receives gradient.
  ad::Var<T> bind_frozen(ad::Tape<T>& tape, const std::string& name) const {
    return tape.leaf(entries_[index(name)].value, nullptr);
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero(e.value.rows(), e.value.cols());
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Glorot-uniform matrix drawn from `rng`.
template <typename T>
ad::Matrix<T> glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

/// Seed for parameter `name` of a model seeded with `seed`. Stable across runs.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& name);

}  // namespace mansy
