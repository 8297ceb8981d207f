#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrmp/errors.hpp"
#include "mrmp/tensor.hpp"

namespace mrmp {

// Step-decay schedule: lr(epoch) = initial_lr * decay_factor^floor(epoch / step_size).
struct LrSchedule {
  double initial_lr = 2e-4;
  int step_size_epochs = 10;
  double decay_factor = 0.9;
};

inline double lr_at_epoch(const LrSchedule& s, int epoch) {
  if (epoch < 0) throw config_error("lr_at_epoch: negative epoch");
  return s.initial_lr * std::pow(s.decay_factor, epoch / s.step_size_epochs);
}

// Adam with bias correction. Moment buffers are kept per parameter tensor,
// aligned with the order params were registered in.
template <typename T>
class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamState(const std::vector<Tensor<T>>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  std::int64_t step_count() const { return t_; }

  // Applies one update using each parameter's accumulated gradient buffer.
  // Parameters with no touched gradient are treated as zero-gradient.
  void step(std::vector<Tensor<T>>& params, double lr) {
    if (params.size() != m_.size()) throw mismatch_error("adam_step: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      if (m_[k].size() != p.size()) throw mismatch_error("adam_step: shape mismatch at parameter " + std::to_string(k));
      const std::vector<T>* g = p.has_grad() ? &p.grad() : nullptr;
      T* pm = m_[k].data();
      T* pv = v_[k].data();
      T* pd = p.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
        if (!std::isfinite(gi)) throw numeric_error("adam_step: non-finite gradient");
        double m = kBeta1 * static_cast<double>(pm[i]) + (1.0 - kBeta1) * gi;
        double v = kBeta2 * static_cast<double>(pv[i]) + (1.0 - kBeta2) * gi * gi;
        pm[i] = static_cast<T>(m);
        pv[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        pd[i] = static_cast<T>(static_cast<double>(pd[i]) - lr * mhat / (std::sqrt(vhat) + kEps));
      }
    }
  }

 private:
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t t_ = 0;
};

// Scales all gradients so the global L2 norm does not exceed `max_norm`.
// Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace mrmp
