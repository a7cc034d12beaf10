#pragma once

#include "mansy/parameters.hpp"

#include <cmath>
#include <vector>

namespace mansy {

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& e : store.entries())
    if (e.grad.size()) sq += static_cast<double>(e.grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& e : store.entries())
      if (e.grad.size()) e.grad *= s;
  }
  return norm;
}

template <typename T>
void sgd_step(ParameterStore<T>& store, double lr) {
  for (auto& e : store.entries())
    if (e.grad.size()) e.value -= static_cast<T>(lr) * e.grad;
}

/// Adaptive-moment optimiser. Moment buffers are keyed by parameter position,
/// so a given instance must always be used with the same store layout.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options o) : opt_(o) {}

  void step(ParameterStore<T>& store) {
    auto& entries = store.entries();
    if (m_.empty()) {
      for (const auto& e : entries) {
        m_.push_back(ad::Matrix<T>::Zero(e.value.rows(), e.value.cols()));
        v_.push_back(ad::Matrix<T>::Zero(e.value.rows(), e.value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T step = static_cast<T>(opt_.lr * std::sqrt(bc2) / bc1);
    const T b1 = static_cast<T>(opt_.beta1);
    const T b2 = static_cast<T>(opt_.beta2);
    const T eps = static_cast<T>(opt_.eps * std::sqrt(bc2));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& e = entries[i];
      if (e.grad.size() == 0) continue;
      m_[i] = b1 * m_[i] + (T(1) - b1) * e.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * e.grad.cwiseProduct(e.grad);
      e.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

  const Options& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  long steps() const { return t_; }

  /// Moment buffers, one per parameter; empty before the first step.
  const std::vector<ad::Matrix<T>>& first_moments() const { return m_; }
  const std::vector<ad::Matrix<T>>& second_moments() const { return v_; }
  void restore(std::vector<ad::Matrix<T>> m, std::vector<ad::Matrix<T>> v, long steps) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = steps;
  }

 private:
  Options opt_;
  std::vector<ad::Matrix<T>> m_, v_;
  long t_ = 0;
};

}  // namespace mansy
