#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "camml/tensor.hpp"

// Independent gradient oracle: central finite differences at h = 1e-5,
// compared per element against the autodiff gradient at relative error
// 1e-4. Evaluates the forward closure afresh for every probe, so it stays
// independent of the backward implementation it checks.
struct GradCheckResult {
  bool ok = true;
  std::string detail;
};

inline GradCheckResult check_gradients(const std::function<camml::Tensor()>& forward,
                                       const std::vector<camml::Tensor>& inputs,
                                       double h = 1e-5, double tol = 1e-4) {
  using camml::Tensor;
  for (const auto& t : inputs) t.zero_grad();
  Tensor loss = forward();
  camml::backward(loss);

  GradCheckResult res;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    const Tensor& t = inputs[ti];
    for (size_t i = 0; i < t.numel(); ++i) {
      const double saved = (*t.data)[i];
      double fplus, fminus;
      {
        camml::NoGradGuard ng;
        (*t.data)[i] = saved + h;
        fplus = forward().scalar();
        (*t.data)[i] = saved - h;
        fminus = forward().scalar();
        (*t.data)[i] = saved;
      }
      const double fd = (fplus - fminus) / (2.0 * h);
      const double ad = (*t.grad)[i];
      // The denominator floor keeps near-zero gradients on an absolute
      // tolerance of tol * 1e-4, below the central-difference noise floor.
      const double err = std::fabs(ad - fd) / std::max(1e-4, std::fabs(ad) + std::fabs(fd));
      if (err >= tol || !std::isfinite(ad)) {
        res.ok = false;
        res.detail = "tensor " + std::to_string(ti) + " element " + std::to_string(i) +
                     ": autodiff " + std::to_string(ad) + " vs finite-diff " +
                     std::to_string(fd) + " (rel err " + std::to_string(err) + ")";
        return res;
      }
    }
  }
  return res;
}
