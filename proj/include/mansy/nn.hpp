#pragma once

#include "mansy/autodiff.hpp"
#include "mansy/parameters.hpp"

#include <string>

namespace mansy {

/// Binds parameters of a store onto a tape, either trainable (gradients flow
/// into the store) or frozen (read-only inference).
template <typename T>
class Binder {
 public:
  Binder(ad::Tape<T>& tape, ParameterStore<T>& store) : tape_(tape), store_(&store), mutable_(&store) {}
  Binder(ad::Tape<T>& tape, const ParameterStore<T>& store) : tape_(tape), store_(&store) {}

  ad::Var<T> operator()(const std::string& name) const {
    return mutable_ ? mutable_->bind(tape_, name) : store_->bind_frozen(tape_, name);
  }

  ad::Tape<T>& tape() const { return tape_; }
  const ParameterStore<T>& store() const { return *store_; }

 private:
  ad::Tape<T>& tape_;
  const ParameterStore<T>* store_;
  ParameterStore<T>* mutable_ = nullptr;
};

/// x * W + b with parameters "<prefix>.w" and "<prefix>.b".
template <typename T>
ad::Var<T> dense(const Binder<T>& p, const std::string& prefix, ad::Var<T> x) {
  return ad::linear(x, p(prefix + ".w"), p(prefix + ".b"));
}

/// Registers "<prefix>.w" (Glorot) and "<prefix>.b" (zeros).
template <typename T>
void add_dense(ParameterStore<T>& store, std::uint64_t seed, const std::string& prefix, Eigen::Index in,
               Eigen::Index out) {
  std::mt19937_64 rng(derive_seed(seed, prefix + ".w"));
  store.add(prefix + ".w", glorot<T>(in, out, rng));
  store.add(prefix + ".b", ad::Matrix<T>::Zero(1, out));
}

}  // namespace mansy
