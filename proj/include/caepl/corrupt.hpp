#pragma once

#include "caepl/rng.hpp"
#include "caepl/tensor.hpp"

namespace caepl {

enum class CorruptionGranularity {
  PerElement,  // every scalar channel element draws independently
  PerPixel,    // one draw per pixel, applied to all channels jointly
};

// Salt-and-pepper corruption: each unit is corrupted with probability
// p_corrupt and, if corrupted, set to 1 with probability p_white else 0.
// Pure function; the input tensor is untouched.
template <typename S>
TensorPtr<S> corrupt_salt_pepper(const TensorPtr<S>& image, double p_corrupt, double p_white,
                                 RngStream& rng,
                                 CorruptionGranularity granularity = CorruptionGranularity::PerElement) {
  if (p_corrupt < 0 || p_corrupt > 1) throw ParamError("corrupt: p_corrupt outside [0,1]");
  if (p_white < 0 || p_white > 1) throw ParamError("corrupt: p_white outside [0,1]");
  auto out = Tensor<S>::from(image->shape, image->values);
  if (granularity == CorruptionGranularity::PerElement) {
    for (auto& v : out->values) {
      if (rng.uniform() < p_corrupt) v = rng.uniform() < p_white ? S(1) : S(0);
    }
    return out;
  }
  // Per-pixel mode needs a [...,C,H,W] layout to tie channels together.
  if (image->shape.size() < 3) throw ShapeError("corrupt: per-pixel mode needs [C,H,W] dims");
  const int W = image->shape.back();
  const int H = image->shape[image->shape.size() - 2];
  const int C = image->shape[image->shape.size() - 3];
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t outer = out->size() / (plane * C);
  for (std::int64_t o = 0; o < outer; ++o) {
    S* base = out->values.data() + o * C * plane;
    for (std::int64_t p = 0; p < plane; ++p) {
      if (rng.uniform() >= p_corrupt) continue;
      const S v = rng.uniform() < p_white ? S(1) : S(0);
      for (int c = 0; c < C; ++c) base[c * plane + p] = v;
    }
  }
  return out;
}

}  // namespace caepl
