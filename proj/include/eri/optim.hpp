#pragma once

#include <cmath>
#include <vector>

#include "eri/layers.hpp"

namespace eri {

/// Adam over a fixed parameter list. Only entries that currently require
/// grad and hold a gradient are updated; step() clears all gradients.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParamList<T> params, Options options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      m_.push_back(Vec<T>::Zero(p.tensor.size()));
      v_.push_back(Vec<T>::Zero(p.tensor.size()));
    }
  }
  explicit Adam(ParamList<T> params) : Adam(std::move(params), Options{}) {}

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    const T step_size = static_cast<T>(options_.lr / c1);
    const T eps = static_cast<T>(options_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i].tensor;
      if (params_[i].buffer || !p.requires_grad() || !p.has_grad()) continue;
      const Vec<T>& g = p.grad();
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      auto denom = (v_[i].array() / static_cast<T>(c2)).sqrt() + eps;
      p.mutable_data().array() -= step_size * m_[i].array() / denom;
    }
    zero_grad();
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  long steps() const { return steps_; }

 private:
  ParamList<T> params_;
  Options options_;
  std::vector<Vec<T>> m_, v_;
  long steps_ = 0;
};

}  // namespace eri
