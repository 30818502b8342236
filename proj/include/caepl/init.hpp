#pragma once

#include <cmath>
#include <string>

#include "caepl/graph.hpp"
#include "caepl/rng.hpp"

namespace caepl {

// Fills a transposed-conv kernel [Cin,Cout,k,k] with the separable bilinear
// tent filter on matching channel pairs; cross-channel planes stay zero.
// Requires k == 2 * stride.
template <typename S>
void bilinear_init(const TensorPtr<S>& weight, int stride) {
  if (!weight || weight->shape.size() != 4 || weight->shape[2] != weight->shape[3])
    throw ShapeError("bilinear_init: weight must be [Cin,Cout,k,k]");
  const int k = weight->shape[2];
  if (k != 2 * stride)
    throw ParamError("bilinear_init: kernel " + std::to_string(k) + " must equal 2*stride (" +
                     std::to_string(2 * stride) + ")");
  const int cin = weight->shape[0], cout = weight->shape[1];
  const double factor = (k + 1) / 2;
  const double center = (k % 2 == 1) ? factor - 1.0 : factor - 0.5;
  std::fill(weight->values.begin(), weight->values.end(), S(0));
  for (int c = 0; c < std::min(cin, cout); ++c) {
    for (int ky = 0; ky < k; ++ky) {
      const double fy = 1.0 - std::abs(ky - center) / factor;
      for (int kx = 0; kx < k; ++kx) {
        const double fx = 1.0 - std::abs(kx - center) / factor;
        weight->values[((static_cast<std::size_t>(c) * cout + c) * k + ky) * k + kx] =
            static_cast<S>(fy * fx);
      }
    }
  }
}

// He-normal initialization: conv/tconv kernels drawn N(0, sqrt(2/fan_in))
// with fan_in = Cin*k*k, biases zero, batch-norm gamma 1 / beta 0 and moving
// statistics reset. Each parameter draws from a substream keyed by its name,
// so the result depends only on (graph, seed).
template <typename S>
void he_normal_init(ModelGraph<S>& model, std::uint64_t seed) {
  RngStream root(seed);
  for (std::size_t i = 0; i < model.spec().layers.size(); ++i) {
    const LayerSpec& l = model.spec().layers[i];
    auto& st = model.state(l.name);
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::TConv: {
        const int cin = l.kind == LayerKind::Conv ? st.weight->shape[1] : st.weight->shape[0];
        const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * l.kernel * l.kernel));
        RngStream rng = root.derive(fnv1a64(l.name + ".weight"));
        for (auto& v : st.weight->values) v = static_cast<S>(rng.normal() * stddev);
        if (st.bias) std::fill(st.bias->values.begin(), st.bias->values.end(), S(0));
        break;
      }
      case LayerKind::BatchNorm:
        std::fill(st.gamma->values.begin(), st.gamma->values.end(), S(1));
        std::fill(st.beta->values.begin(), st.beta->values.end(), S(0));
        std::fill(st.moving_mean->values.begin(), st.moving_mean->values.end(), S(0));
        std::fill(st.moving_var->values.begin(), st.moving_var->values.end(), S(1));
        break;
      default: break;
    }
  }
}

}  // namespace caepl
