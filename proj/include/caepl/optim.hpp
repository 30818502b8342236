#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "caepl/tensor.hpp"

namespace caepl {

// Name patterns are either exact or a prefix ending in '*'.
inline bool pattern_matches(const std::string& pattern, const std::string& name) {
  if (!pattern.empty() && pattern.back() == '*')
    return name.rfind(pattern.substr(0, pattern.size() - 1), 0) == 0;
  return pattern == name;
}

// Parameter-name-pattern -> L2 coefficient. Applied to conv/tconv kernels
// only (".weight" tensors); biases and batch-norm parameters are exempt.
struct L2Map {
  std::vector<std::pair<std::string, double>> entries;

  double coefficient_for(const std::string& name) const {
    double coeff = 0.0;
    bool matched = false;
    for (const auto& [pattern, lambda] : entries) {
      if (lambda < 0) throw ConfigError("l2 coefficient for '" + pattern + "' is negative");
      if (!pattern_matches(pattern, name)) continue;
      if (matched && lambda != coeff)
        throw ConfigError("l2 patterns overlap on '" + name + "' with different coefficients");
      coeff = lambda;
      matched = true;
    }
    return coeff;
  }
};

// Adds the penalty's gradient (2*lambda*theta) into existing grads and
// returns the penalty value sum(lambda * theta^2). Call after backward().
template <typename S>
double apply_l2(const std::vector<std::pair<std::string, TensorPtr<S>>>& params,
                const L2Map& map) {
  double penalty = 0.0;
  for (const auto& [name, t] : params) {
    if (name.size() < 7 || name.compare(name.size() - 7, 7, ".weight") != 0) continue;
    const double lambda = map.coefficient_for(name);
    if (lambda == 0.0) continue;
    auto& grad = t->grad();
    double sq = 0.0;
    for (std::size_t i = 0; i < t->values.size(); ++i) {
      const double v = static_cast<double>(t->values[i]);
      sq += v * v;
      grad[i] += static_cast<S>(2.0 * lambda * v);
    }
    penalty += lambda * sq;
  }
  return penalty;
}

// Penalty value only, without touching gradients (validation-side loss).
template <typename S>
double l2_penalty(const std::vector<std::pair<std::string, TensorPtr<S>>>& params,
                  const L2Map& map) {
  double penalty = 0.0;
  for (const auto& [name, t] : params) {
    if (name.size() < 7 || name.compare(name.size() - 7, 7, ".weight") != 0) continue;
    const double lambda = map.coefficient_for(name);
    if (lambda == 0.0) continue;
    double sq = 0.0;
    for (S v : t->values) sq += static_cast<double>(v) * static_cast<double>(v);
    penalty += lambda * sq;
  }
  return penalty;
}

// SGD with Nesterov momentum in the common framework form:
//   v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g
// Velocities are keyed by parameter name and start at zero.
template <typename S>
class SgdNesterov {
 public:
  SgdNesterov(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (lr < 0) throw ParamError("sgd: negative learning rate");
    if (momentum < 0 || momentum >= 1) throw ParamError("sgd: momentum must be in [0,1)");
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step(const std::vector<std::pair<std::string, TensorPtr<S>>>& params) {
    for (const auto& [name, t] : params) {
      auto& v = velocity_[name];
      if (v.size() != t->values.size()) {
        if (!v.empty())
          throw ContractError("sgd: parameter '" + name + "' changed size mid-training");
        v.assign(t->values.size(), S(0));
      }
      const auto& g = t->grad();
      const S mu = static_cast<S>(momentum_);
      const S lr = static_cast<S>(lr_);
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = mu * v[i] - lr * g[i];
        const S delta = mu * v[i] - lr * g[i];
        if (delta != S(0)) t->values[i] += delta;  // keep lr=0 steps bit-exact
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  std::unordered_map<std::string, std::vector<S>> velocity_;
};

}  // namespace caepl
