#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eri/tensor.hpp"

namespace eri {

/// A single scalar coordinate of a parameter tensor.
template <typename T>
struct Probe {
  std::string name;
  Tensor<T> tensor;
  Index index;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst;  // probe name of the worst coordinate
  Index checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares autodiff gradients against central differences
/// (f(θ+eps) - f(θ-eps)) / 2eps at each probe coordinate. `loss_fn` must
/// rebuild the graph from current parameter values on every call.
template <typename T, typename LossFn>
GradCheckReport grad_check_probes(LossFn&& loss_fn, const std::vector<Probe<T>>& probes, T eps) {
  for (const auto& p : probes) {
    Tensor<T> t = p.tensor;
    t.zero_grad();
  }
  Tensor<T> loss = loss_fn();
  backward(loss);

  std::vector<double> analytic;
  analytic.reserve(probes.size());
  for (const auto& p : probes) analytic.push_back(p.tensor.has_grad() ? static_cast<double>(p.tensor.grad()[p.index]) : 0.0);

  GradCheckReport report;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    Tensor<T> t = probes[i].tensor;
    T& slot = t.mutable_data()[probes[i].index];
    const T saved = slot;
    slot = saved + eps;
    double plus = static_cast<double>(loss_fn().item());
    slot = saved - eps;
    double minus = static_cast<double>(loss_fn().item());
    slot = saved;
    double numeric = (plus - minus) / (2.0 * static_cast<double>(eps));
    double err = relative_error(analytic[i], numeric);
    ++report.checked;
    if (report.worst.empty() || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst = probes[i].name + "[" + std::to_string(probes[i].index) + "]";
    }
  }
  return report;
}

/// Checks every coordinate of every tensor in `params`.
template <typename T, typename LossFn>
double grad_check(LossFn&& loss_fn, const std::vector<Tensor<T>>& params, T eps) {
  std::vector<Probe<T>> probes;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (Index i = 0; i < params[k].size(); ++i) probes.push_back({"param" + std::to_string(k), params[k], i});
  return grad_check_probes<T>(std::forward<LossFn>(loss_fn), probes, eps).max_relative_error;
}

}  // namespace eri
