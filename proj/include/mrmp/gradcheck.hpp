#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "mrmp/tensor.hpp"

namespace mrmp {

// Compares reverse-mode gradients against central finite differences.
// `loss_fn` must rebuild the scalar loss from the current parameter values on
// every call and be deterministic (dropout disabled). The finite-difference
// side uses forward evaluations only, so it is independent of the tape.
// Returns max over parameter elements of |g_auto - g_fd| / max(|g_auto|, |g_fd|, 1e-12).
template <typename T>
double gradient_check(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params,
                      T h) {
  for (auto& p : params) p.zero_grad();
  {
    GradTape<T> tape;
    Tensor<T> loss = loss_fn();
    tape.backward(loss);
  }
  double max_err = 0.0;
  for (auto& p : params) {
    const std::vector<T> analytic =
        p.has_grad() ? p.grad() : std::vector<T>(p.size(), T(0));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p.values()[i];
      p.values()[i] = saved + h;
      const double f_plus = static_cast<double>(loss_fn().item());
      p.values()[i] = saved - h;
      const double f_minus = static_cast<double>(loss_fn().item());
      p.values()[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
      const double ga = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(ga), std::abs(fd), 1e-12});
      max_err = std::max(max_err, std::abs(ga - fd) / denom);
    }
  }
  return max_err;
}

}  // namespace mrmp
