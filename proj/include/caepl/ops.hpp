#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <vector>

#include "caepl/tensor.hpp"

namespace caepl {

// All kernels below keep a fixed per-output-element accumulation order, so
// results are bitwise identical whether the outer loops run on one thread or
// several (OpenMP splits independent output elements only).

namespace detail {

inline std::int64_t idx4(int n, int c, int y, int x, int C, int H, int W) {
  return ((static_cast<std::int64_t>(n) * C + c) * H + y) * W + x;
}

// C[M x N] += A[M x K] * B[K x N], row-major. k is the innermost reduction
// per element; rows are independent.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    S* crow = c + static_cast<std::int64_t>(i) * n;
    const S* arow = a + static_cast<std::int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      const S* brow = b + static_cast<std::int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x K] += A[M x N] * B[K x N]^T, i.e. rows of A dotted with rows of B.
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int m, int n, int k) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::int64_t>(i) * n;
    S* crow = c + static_cast<std::int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const S* brow = b + static_cast<std::int64_t>(kk) * n;
      S acc = 0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

// C[K x N] += A[M x K]^T * B[M x N].
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int kk = 0; kk < k; ++kk) {
    S* crow = c + static_cast<std::int64_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const S av = a[static_cast<std::int64_t>(i) * k + kk];
      const S* brow = b + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// cols[(ci*k+ky)*k+kx][oy*Wo+ox] = x[ci][oy*stride+ky-pad][ox*stride+kx-pad]
template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* cols) {
  for (int ci = 0; ci < C; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = cols + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) *
                            (static_cast<std::int64_t>(Ho) * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[static_cast<std::int64_t>(oy) * Wo + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                    ? x[(static_cast<std::int64_t>(ci) * H + iy) * W + ix]
                    : S(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add column gradients back onto the image.
// Overlapping windows make this a sequential loop with a fixed order.
template <typename S>
void col2im_add(const S* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                S* dx) {
  for (int ci = 0; ci < C; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = cols + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) *
                                  (static_cast<std::int64_t>(Ho) * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            dx[(static_cast<std::int64_t>(ci) * H + iy) * W + ix] +=
                row[static_cast<std::int64_t>(oy) * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout] (optional).
// Output extent (H + 2*pad - k) / stride + 1 must be integral.
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> conv2d(const TensorPtr<S>& input, const TensorPtr<S>& kernel, const TensorPtr<S>& bias,
                    int stride = 1, int pad = 0) {
  if (!input || input->shape.size() != 4) throw ShapeError("conv2d: input must be [N,C,H,W]");
  if (!kernel || kernel->shape.size() != 4) throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k]");
  if (kernel->shape[2] != kernel->shape[3]) throw ShapeError("conv2d: kernel must be square");
  if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
  if (pad < 0) throw ParamError("conv2d: pad must be >= 0");
  const int N = input->shape[0], Cin = input->shape[1], H = input->shape[2], W = input->shape[3];
  const int Cout = kernel->shape[0], k = kernel->shape[2];
  if (kernel->shape[1] != Cin)
    throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(Cin) +
                     ", kernel expects " + std::to_string(kernel->shape[1]));
  if (bias && (bias->shape.size() != 1 || bias->shape[0] != Cout))
    throw ShapeError("conv2d: bias must be [Cout]");
  const int numerH = H + 2 * pad - k, numerW = W + 2 * pad - k;
  if (numerH < 0 || numerW < 0 || numerH % stride != 0 || numerW % stride != 0)
    throw ShapeError("conv2d: non-integral output extent for input " + shape_str(input->shape) +
                     " kernel " + std::to_string(k) + " stride " + std::to_string(stride) +
                     " pad " + std::to_string(pad));
  const int Ho = numerH / stride + 1, Wo = numerW / stride + 1;
  const std::int64_t K_ = static_cast<std::int64_t>(Cin) * k * k;
  const std::int64_t P_ = static_cast<std::int64_t>(Ho) * Wo;

  std::vector<S> out(static_cast<std::size_t>(N) * Cout * P_, S(0));
  std::vector<S> cols(static_cast<std::size_t>(K_) * P_);
  for (int n = 0; n < N; ++n) {
    detail::im2col(input->values.data() + detail::idx4(n, 0, 0, 0, Cin, H, W), Cin, H, W, k, stride,
                   pad, Ho, Wo, cols.data());
    S* on = out.data() + detail::idx4(n, 0, 0, 0, Cout, Ho, Wo);
    if (bias) {
      for (int co = 0; co < Cout; ++co)
        for (std::int64_t p = 0; p < P_; ++p) on[co * P_ + p] = bias->values[co];
    }
    detail::gemm_nn(kernel->values.data(), cols.data(), on, Cout, static_cast<int>(K_),
                    static_cast<int>(P_));
  }

  TensorPtr<S> in_p = input, k_p = kernel, b_p = bias;
  return make_node<S>(
      {N, Cout, Ho, Wo}, std::move(out), {input, kernel, bias},
      [in_p, k_p, b_p, stride, pad, N, Cin, H, W, Cout, k, Ho, Wo, K_, P_](Tensor<S>& node) {
        const S* g = node.grad().data();
        if (b_p && b_p->requires_grad) {
          S* db = b_p->grad().data();
          for (int co = 0; co < Cout; ++co) {
            S acc = 0;
            for (int n = 0; n < N; ++n) {
              const S* gn = g + detail::idx4(n, co, 0, 0, Cout, Ho, Wo);
              for (std::int64_t p = 0; p < P_; ++p) acc += gn[p];
            }
            db[co] += acc;
          }
        }
        if (k_p->requires_grad) {
          std::vector<S> cols(static_cast<std::size_t>(K_) * P_);
          S* dw = k_p->grad().data();
          for (int n = 0; n < N; ++n) {
            detail::im2col(in_p->values.data() + detail::idx4(n, 0, 0, 0, Cin, H, W), Cin, H, W, k,
                           stride, pad, Ho, Wo, cols.data());
            detail::gemm_nt(g + detail::idx4(n, 0, 0, 0, Cout, Ho, Wo), cols.data(), dw, Cout,
                            static_cast<int>(P_), static_cast<int>(K_));
          }
        }
        if (in_p->requires_grad || in_p->backward_fn) {
          std::vector<S> dcols(static_cast<std::size_t>(K_) * P_);
          S* dx = in_p->grad().data();
          for (int n = 0; n < N; ++n) {
            std::fill(dcols.begin(), dcols.end(), S(0));
            detail::gemm_tn(k_p->values.data(), g + detail::idx4(n, 0, 0, 0, Cout, Ho, Wo),
                            dcols.data(), Cout, static_cast<int>(K_), static_cast<int>(P_));
            detail::col2im_add(dcols.data(), Cin, H, W, k, stride, pad, Ho, Wo,
                               dx + detail::idx4(n, 0, 0, 0, Cin, H, W));
          }
        }
      });
}

template <typename S>
TensorPtr<S> conv2d(const TensorPtr<S>& input, const TensorPtr<S>& kernel, std::nullptr_t,
                    int stride = 1, int pad = 0) {
  return conv2d(input, kernel, TensorPtr<S>(), stride, pad);
}

// ---------------------------------------------------------------------------
// transposed_conv2d: input [N,Cin,H,W], kernel [Cin,Cout,k,k]. Output extent
// is stride*(H-1) + k - 2*crop with symmetric crop (k - stride)/2, so a
// stride-s upsample of an H map yields exactly s*H. No bias term.
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> transposed_conv2d(const TensorPtr<S>& input, const TensorPtr<S>& kernel, int stride) {
  if (!input || input->shape.size() != 4)
    throw ShapeError("transposed_conv2d: input must be [N,C,H,W]");
  if (!kernel || kernel->shape.size() != 4)
    throw ShapeError("transposed_conv2d: kernel must be [Cin,Cout,k,k]");
  if (kernel->shape[2] != kernel->shape[3])
    throw ShapeError("transposed_conv2d: kernel must be square");
  if (stride < 1) throw ParamError("transposed_conv2d: stride must be >= 1");
  const int N = input->shape[0], Cin = input->shape[1], H = input->shape[2], W = input->shape[3];
  const int Cout = kernel->shape[1], k = kernel->shape[2];
  if (kernel->shape[0] != Cin)
    throw ShapeError("transposed_conv2d: channel mismatch, input has " + std::to_string(Cin) +
                     ", kernel expects " + std::to_string(kernel->shape[0]));
  if (k < stride || (k - stride) % 2 != 0)
    throw ParamError("transposed_conv2d: kernel " + std::to_string(k) + " with stride " +
                     std::to_string(stride) + " has no symmetric crop");
  const int crop = (k - stride) / 2;
  const int Ho = stride * H, Wo = stride * W;

  std::vector<S> out(static_cast<std::size_t>(N) * Cout * Ho * Wo, S(0));
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      for (int y = 0; y < Ho; ++y) {
        for (int x = 0; x < Wo; ++x) {
          S acc = 0;
          for (int ci = 0; ci < Cin; ++ci) {
            const S* xin = input->values.data() + detail::idx4(n, ci, 0, 0, Cin, H, W);
            const S* w = kernel->values.data() +
                         (static_cast<std::int64_t>(ci) * Cout + co) * k * k;
            for (int ky = 0; ky < k; ++ky) {
              const int ty = y + crop - ky;
              if (ty < 0 || ty % stride != 0) continue;
              const int iy = ty / stride;
              if (iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int tx = x + crop - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const int ix = tx / stride;
                if (ix >= W) continue;
                acc += xin[static_cast<std::int64_t>(iy) * W + ix] * w[ky * k + kx];
              }
            }
          }
          out[detail::idx4(n, co, y, x, Cout, Ho, Wo)] = acc;
        }
      }
    }
  }

  TensorPtr<S> in_p = input, k_p = kernel;
  return make_node<S>(
      {N, Cout, Ho, Wo}, std::move(out), {input, kernel},
      [in_p, k_p, stride, crop, N, Cin, H, W, Cout, k, Ho, Wo](Tensor<S>& node) {
        const S* g = node.grad().data();
        if (in_p->requires_grad || in_p->backward_fn) {
          S* dx = in_p->grad().data();
#pragma omp parallel for schedule(static) collapse(2)
          for (int n = 0; n < N; ++n) {
            for (int ci = 0; ci < Cin; ++ci) {
              for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                  S acc = 0;
                  for (int co = 0; co < Cout; ++co) {
                    const S* gn = g + detail::idx4(n, co, 0, 0, Cout, Ho, Wo);
                    const S* w = k_p->values.data() +
                                 (static_cast<std::int64_t>(ci) * Cout + co) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                      const int y = stride * iy + ky - crop;
                      if (y < 0 || y >= Ho) continue;
                      for (int kx = 0; kx < k; ++kx) {
                        const int x = stride * ix + kx - crop;
                        if (x < 0 || x >= Wo) continue;
                        acc += gn[static_cast<std::int64_t>(y) * Wo + x] * w[ky * k + kx];
                      }
                    }
                  }
                  dx[detail::idx4(n, ci, iy, ix, Cin, H, W)] += acc;
                }
              }
            }
          }
        }
        if (k_p->requires_grad) {
          S* dw = k_p->grad().data();
#pragma omp parallel for schedule(static) collapse(2)
          for (int ci = 0; ci < Cin; ++ci) {
            for (int co = 0; co < Cout; ++co) {
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  S acc = 0;
                  for (int n = 0; n < N; ++n) {
                    const S* xin = in_p->values.data() + detail::idx4(n, ci, 0, 0, Cin, H, W);
                    const S* gn = g + detail::idx4(n, co, 0, 0, Cout, Ho, Wo);
                    for (int iy = 0; iy < H; ++iy) {
                      const int y = stride * iy + ky - crop;
                      if (y < 0 || y >= Ho) continue;
                      for (int ix = 0; ix < W; ++ix) {
                        const int x = stride * ix + kx - crop;
                        if (x < 0 || x >= Wo) continue;
                        acc += xin[static_cast<std::int64_t>(iy) * W + ix] *
                               gn[static_cast<std::int64_t>(y) * Wo + x];
                      }
                    }
                  }
                  dw[((static_cast<std::int64_t>(ci) * Cout + co) * k + ky) * k + kx] += acc;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// max_pool2d: non-overlapping window (window == stride). Ties route the
// gradient to the first maximum in row-major window order.
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> max_pool2d(const TensorPtr<S>& input, int window = 2, int stride = 2) {
  if (!input || input->shape.size() != 4) throw ShapeError("max_pool2d: input must be [N,C,H,W]");
  if (window < 1 || stride != window)
    throw ParamError("max_pool2d: only non-overlapping pooling (window == stride) is supported");
  const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
  if (H % window != 0 || W % window != 0)
    throw ShapeError("max_pool2d: extents " + shape_str(input->shape) + " not divisible by window " +
                     std::to_string(window));
  const int Ho = H / window, Wo = W / window;

  std::vector<S> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const S* xin = input->values.data() + detail::idx4(n, c, 0, 0, C, H, W);
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          std::int64_t best_idx = -1;
          S best = 0;
          for (int wy = 0; wy < window; ++wy) {
            for (int wx = 0; wx < window; ++wx) {
              const std::int64_t idx =
                  static_cast<std::int64_t>(oy * window + wy) * W + (ox * window + wx);
              if (best_idx < 0 || xin[idx] > best) {
                best = xin[idx];
                best_idx = idx;
              }
            }
          }
          const std::int64_t o = detail::idx4(n, c, oy, ox, C, Ho, Wo);
          out[o] = best;
          (*argmax)[o] = detail::idx4(n, c, 0, 0, C, H, W) + best_idx;
        }
      }
    }
  }

  TensorPtr<S> in_p = input;
  return make_node<S>({N, C, Ho, Wo}, std::move(out), {input},
                      [in_p, argmax](Tensor<S>& node) {
                        if (!(in_p->requires_grad || in_p->backward_fn)) return;
                        const S* g = node.grad().data();
                        S* dx = in_p->grad().data();
                        const std::int64_t n = node.size();
                        for (std::int64_t i = 0; i < n; ++i) dx[(*argmax)[i]] += g[i];
                      });
}

// ---------------------------------------------------------------------------
// batch_norm over [N,C,H,W], per-channel statistics across N,H,W. Training
// mode normalizes with batch statistics (biased variance) and, when
// update_stats is set, folds them into the moving buffers; inference mode is
// an affine map built from the moving statistics.
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> batch_norm(const TensorPtr<S>& input, const TensorPtr<S>& gamma,
                        const TensorPtr<S>& beta, const TensorPtr<S>& moving_mean,
                        const TensorPtr<S>& moving_var, bool training, bool update_stats = true,
                        double eps = 1e-5, double momentum = 0.99) {
  if (!input || input->shape.size() != 4) throw ShapeError("batch_norm: input must be [N,C,H,W]");
  const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
  if (N < 1) throw ParamError("batch_norm: empty batch");
  for (const auto& t : {gamma, beta, moving_mean, moving_var})
    if (!t || t->size() != C) throw ShapeError("batch_norm: per-channel tensors must be [C]");
  if (eps <= 0) throw ParamError("batch_norm: eps must be positive");
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t m = static_cast<std::int64_t>(N) * plane;

  auto mean = std::make_shared<std::vector<S>>(C);
  auto invstd = std::make_shared<std::vector<S>>(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (int n = 0; n < N; ++n) {
        const S* xin = input->values.data() + detail::idx4(n, c, 0, 0, C, H, W);
        for (std::int64_t p = 0; p < plane; ++p) {
          const double v = static_cast<double>(xin[p]);
          sum += v;
          sq += v * v;
        }
      }
      const double mu = sum / static_cast<double>(m);
      const double var = std::max(0.0, sq / static_cast<double>(m) - mu * mu);
      (*mean)[c] = static_cast<S>(mu);
      (*invstd)[c] = static_cast<S>(1.0 / std::sqrt(var + eps));
      if (update_stats) {
        moving_mean->values[c] =
            static_cast<S>(momentum * moving_mean->values[c] + (1.0 - momentum) * mu);
        moving_var->values[c] =
            static_cast<S>(momentum * moving_var->values[c] + (1.0 - momentum) * var);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = moving_mean->values[c];
      (*invstd)[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(moving_var->values[c]) + eps));
    }
  }

  std::vector<S> out(input->values.size());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const S mu = (*mean)[c], is = (*invstd)[c], ga = gamma->values[c], be = beta->values[c];
    for (int n = 0; n < N; ++n) {
      const S* xin = input->values.data() + detail::idx4(n, c, 0, 0, C, H, W);
      S* on = out.data() + detail::idx4(n, c, 0, 0, C, H, W);
      for (std::int64_t p = 0; p < plane; ++p) on[p] = ga * (xin[p] - mu) * is + be;
    }
  }

  TensorPtr<S> in_p = input, g_p = gamma, b_p = beta;
  return make_node<S>(
      input->shape, std::move(out), {input, gamma, beta},
      [in_p, g_p, b_p, mean, invstd, training, N, C, H, W, plane, m](Tensor<S>& node) {
        const S* g = node.grad().data();
        const bool need_dx = in_p->requires_grad || in_p->backward_fn;
        // Grad buffers must exist before the parallel region.
        S* dgamma = g_p->requires_grad ? g_p->grad().data() : nullptr;
        S* dbeta = b_p->requires_grad ? b_p->grad().data() : nullptr;
        S* dx_base = need_dx ? in_p->grad().data() : nullptr;
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
          const S mu = (*mean)[c], is = (*invstd)[c], ga = g_p->values[c];
          double sum_g = 0, sum_g_xhat = 0;
          for (int n = 0; n < N; ++n) {
            const S* gn = g + detail::idx4(n, c, 0, 0, C, H, W);
            const S* xin = in_p->values.data() + detail::idx4(n, c, 0, 0, C, H, W);
            for (std::int64_t p = 0; p < plane; ++p) {
              sum_g += static_cast<double>(gn[p]);
              sum_g_xhat += static_cast<double>(gn[p]) * static_cast<double>((xin[p] - mu) * is);
            }
          }
          if (dgamma) dgamma[c] += static_cast<S>(sum_g_xhat);
          if (dbeta) dbeta[c] += static_cast<S>(sum_g);
          if (!need_dx) continue;
          if (training) {
            const S k1 = static_cast<S>(sum_g / static_cast<double>(m));
            const S k2 = static_cast<S>(sum_g_xhat / static_cast<double>(m));
            for (int n = 0; n < N; ++n) {
              const S* gn = g + detail::idx4(n, c, 0, 0, C, H, W);
              const S* xin = in_p->values.data() + detail::idx4(n, c, 0, 0, C, H, W);
              S* dx = dx_base + detail::idx4(n, c, 0, 0, C, H, W);
              for (std::int64_t p = 0; p < plane; ++p) {
                const S xhat = (xin[p] - mu) * is;
                dx[p] += ga * is * (gn[p] - k1 - xhat * k2);
              }
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const S* gn = g + detail::idx4(n, c, 0, 0, C, H, W);
              S* dx = dx_base + detail::idx4(n, c, 0, 0, C, H, W);
              for (std::int64_t p = 0; p < plane; ++p) dx[p] += ga * is * gn[p];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> relu(const TensorPtr<S>& input) {
  std::vector<S> out(input->values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = input->values[i] > S(0) ? input->values[i] : S(0);
  TensorPtr<S> in_p = input;
  return make_node<S>(input->shape, std::move(out), {input}, [in_p](Tensor<S>& node) {
    if (!(in_p->requires_grad || in_p->backward_fn)) return;
    const S* g = node.grad().data();
    S* dx = in_p->grad().data();
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < node.values.size(); ++i)
      if (in_p->values[i] > S(0)) dx[i] += g[i];
  });
}

// 0.5 * tanh(x) + 0.5, range the open interval (0,1) in exact arithmetic.
template <typename S>
TensorPtr<S> modified_tanh(const TensorPtr<S>& input) {
  std::vector<S> out(input->values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = S(0.5) * std::tanh(input->values[i]) + S(0.5);
  TensorPtr<S> in_p = input;
  return make_node<S>(input->shape, std::move(out), {input}, [in_p](Tensor<S>& node) {
    if (!(in_p->requires_grad || in_p->backward_fn)) return;
    const S* g = node.grad().data();
    S* dx = in_p->grad().data();
    for (std::size_t i = 0; i < node.values.size(); ++i) {
      const S t = std::tanh(in_p->values[i]);
      dx[i] += g[i] * S(0.5) * (S(1) - t * t);
    }
  });
}

// Channelwise softmax over dim 1 of [N,C,H,W].
template <typename S>
TensorPtr<S> softmax_channels(const TensorPtr<S>& input) {
  if (!input || input->shape.size() != 4)
    throw ShapeError("softmax_channels: input must be [N,C,H,W]");
  const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  std::vector<S> out(input->values.size());
  for (int n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const std::int64_t base = static_cast<std::int64_t>(n) * C * plane + p;
      S mx = input->values[base];
      for (int c = 1; c < C; ++c) mx = std::max(mx, input->values[base + c * plane]);
      double denom = 0;
      for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(input->values[base + c * plane] - mx));
      for (int c = 0; c < C; ++c)
        out[base + c * plane] =
            static_cast<S>(std::exp(static_cast<double>(input->values[base + c * plane] - mx)) / denom);
    }
  }
  TensorPtr<S> in_p = input;
  return make_node<S>(input->shape, std::move(out), {input}, [in_p, N, C, plane](Tensor<S>& node) {
    if (!(in_p->requires_grad || in_p->backward_fn)) return;
    const S* g = node.grad().data();
    const S* y = node.values.data();
    S* dx = in_p->grad().data();
    for (int n = 0; n < N; ++n) {
      for (std::int64_t p = 0; p < plane; ++p) {
        const std::int64_t base = static_cast<std::int64_t>(n) * C * plane + p;
        double dot = 0;
        for (int c = 0; c < C; ++c) dot += static_cast<double>(g[base + c * plane]) * y[base + c * plane];
        for (int c = 0; c < C; ++c)
          dx[base + c * plane] += y[base + c * plane] * (g[base + c * plane] - static_cast<S>(dot));
      }
    }
  });
}

// Elementwise sum of two same-shape tensors (skip-connection fusion).
template <typename S>
TensorPtr<S> add(const TensorPtr<S>& a, const TensorPtr<S>& b) {
  if (!a || !b || a->shape != b->shape)
    throw ShapeError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  std::vector<S> out(a->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] + b->values[i];
  TensorPtr<S> a_p = a, b_p = b;
  return make_node<S>(a->shape, std::move(out), {a, b}, [a_p, b_p](Tensor<S>& node) {
    const S* g = node.grad().data();
    if (a_p->requires_grad || a_p->backward_fn) {
      S* da = a_p->grad().data();
      for (std::size_t i = 0; i < node.values.size(); ++i) da[i] += g[i];
    }
    if (b_p->requires_grad || b_p->backward_fn) {
      S* db = b_p->grad().data();
      for (std::size_t i = 0; i < node.values.size(); ++i) db[i] += g[i];
    }
  });
}

template <typename S>
TensorPtr<S> sum(const TensorPtr<S>& input) {
  double acc = 0;
  for (S v : input->values) acc += static_cast<double>(v);
  TensorPtr<S> in_p = input;
  return make_node<S>({1}, {static_cast<S>(acc)}, {input}, [in_p](Tensor<S>& node) {
    if (!(in_p->requires_grad || in_p->backward_fn)) return;
    const S g = node.grad()[0];
    S* dx = in_p->grad().data();
    for (std::size_t i = 0; i < in_p->values.size(); ++i) dx[i] += g;
  });
}

// ---------------------------------------------------------------------------
// Losses (scalar outputs).
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> mse(const TensorPtr<S>& pred, const TensorPtr<S>& target) {
  if (!pred || !target || pred->shape != target->shape)
    throw ShapeError("mse: shape mismatch");
  const std::int64_t n = pred->size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred->values[i]) - static_cast<double>(target->values[i]);
    acc += d * d;
  }
  TensorPtr<S> p_p = pred, t_p = target;
  return make_node<S>({1}, {static_cast<S>(acc / static_cast<double>(n))}, {pred, target},
                      [p_p, t_p, n](Tensor<S>& node) {
                        const S g = node.grad()[0];
                        const S scale = g * S(2) / static_cast<S>(n);
                        if (p_p->requires_grad || p_p->backward_fn) {
                          S* dp = p_p->grad().data();
                          for (std::int64_t i = 0; i < n; ++i)
                            dp[i] += scale * (p_p->values[i] - t_p->values[i]);
                        }
                        if (t_p->requires_grad || t_p->backward_fn) {
                          S* dt = t_p->grad().data();
                          for (std::int64_t i = 0; i < n; ++i)
                            dt[i] -= scale * (p_p->values[i] - t_p->values[i]);
                        }
                      });
}

inline constexpr double kBceClamp = 1e-7;

template <typename S>
TensorPtr<S> binary_cross_entropy(const TensorPtr<S>& pred, const TensorPtr<S>& target) {
  if (!pred || !target || pred->shape != target->shape)
    throw ShapeError("binary_cross_entropy: shape mismatch");
  const std::int64_t n = pred->size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(target->values[i]);
    if (t < 0.0 || t > 1.0) throw ParamError("binary_cross_entropy: target outside [0,1]");
  }
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(pred->values[i]), lo, hi);
    const double t = static_cast<double>(target->values[i]);
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  TensorPtr<S> p_p = pred, t_p = target;
  return make_node<S>({1}, {static_cast<S>(acc / static_cast<double>(n))}, {pred, target},
                      [p_p, t_p, n, lo, hi](Tensor<S>& node) {
                        if (!(p_p->requires_grad || p_p->backward_fn)) return;
                        const S g = node.grad()[0];
                        S* dp = p_p->grad().data();
                        for (std::int64_t i = 0; i < n; ++i) {
                          const double p = static_cast<double>(p_p->values[i]);
                          if (p <= lo || p >= hi) continue;  // clamp region: zero slope
                          const double t = static_cast<double>(t_p->values[i]);
                          dp[i] += g * static_cast<S>((p - t) / (p * (1.0 - p) * static_cast<double>(n)));
                        }
                      });
}

// Softmax cross-entropy over [N,K,H,W] logits against integer labels of size
// N*H*W. Pixels labeled void_label contribute neither loss nor gradient; an
// all-void batch yields loss 0 with a one-line warning.
template <typename S>
TensorPtr<S> softmax_cross_entropy(const TensorPtr<S>& logits, const std::vector<int>& labels,
                                   int void_label) {
  if (!logits || logits->shape.size() != 4)
    throw ShapeError("softmax_cross_entropy: logits must be [N,K,H,W]");
  const int N = logits->shape[0], K = logits->shape[1], H = logits->shape[2], W = logits->shape[3];
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  if (static_cast<std::int64_t>(labels.size()) != static_cast<std::int64_t>(N) * plane)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  std::int64_t valid = 0;
  double acc = 0;
  for (int n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const int lab = labels[static_cast<std::int64_t>(n) * plane + p];
      if (lab == void_label) continue;
      if (lab < 0 || lab >= K)
        throw DataError("softmax_cross_entropy: label " + std::to_string(lab) +
                        " outside [0," + std::to_string(K) + ") and not void");
      const std::int64_t base = static_cast<std::int64_t>(n) * K * plane + p;
      double mx = static_cast<double>(logits->values[base]);
      for (int c = 1; c < K; ++c)
        mx = std::max(mx, static_cast<double>(logits->values[base + c * plane]));
      double denom = 0;
      for (int c = 0; c < K; ++c)
        denom += std::exp(static_cast<double>(logits->values[base + c * plane]) - mx);
      acc += std::log(denom) + mx - static_cast<double>(logits->values[base + lab * plane]);
      ++valid;
    }
  }
  if (valid == 0) {
    std::cerr << "caepl: warning: all-void label batch, loss is 0\n";
    acc = 0;
  } else {
    acc /= static_cast<double>(valid);
  }
  TensorPtr<S> l_p = logits;
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return make_node<S>(
      {1}, {static_cast<S>(acc)}, {logits},
      [l_p, labels_copy, void_label, N, K, plane, valid](Tensor<S>& node) {
        if (!(l_p->requires_grad || l_p->backward_fn) || valid == 0) return;
        const S g = node.grad()[0];
        S* dz = l_p->grad().data();
        const S inv = g / static_cast<S>(valid);
        for (int n = 0; n < N; ++n) {
          for (std::int64_t p = 0; p < plane; ++p) {
            const int lab = (*labels_copy)[static_cast<std::int64_t>(n) * plane + p];
            if (lab == void_label) continue;
            const std::int64_t base = static_cast<std::int64_t>(n) * K * plane + p;
            double mx = static_cast<double>(l_p->values[base]);
            for (int c = 1; c < K; ++c)
              mx = std::max(mx, static_cast<double>(l_p->values[base + c * plane]));
            double denom = 0;
            for (int c = 0; c < K; ++c)
              denom += std::exp(static_cast<double>(l_p->values[base + c * plane]) - mx);
            for (int c = 0; c < K; ++c) {
              const double soft =
                  std::exp(static_cast<double>(l_p->values[base + c * plane]) - mx) / denom;
              dz[base + c * plane] += inv * static_cast<S>(soft - (c == lab ? 1.0 : 0.0));
            }
          }
        }
      });
}

// Per-pixel argmax over the channel dim; ties resolve to the lowest index.
template <typename S>
std::vector<int> argmax_channels(const TensorPtr<S>& logits) {
  if (!logits || logits->shape.size() != 4)
    throw ShapeError("argmax_channels: input must be [N,K,H,W]");
  const int N = logits->shape[0], K = logits->shape[1];
  const std::int64_t plane = static_cast<std::int64_t>(logits->shape[2]) * logits->shape[3];
  std::vector<int> out(static_cast<std::size_t>(N) * plane);
  for (int n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const std::int64_t base = static_cast<std::int64_t>(n) * K * plane + p;
      int best = 0;
      S bv = logits->values[base];
      for (int c = 1; c < K; ++c) {
        if (logits->values[base + c * plane] > bv) {
          bv = logits->values[base + c * plane];
          best = c;
        }
      }
      out[static_cast<std::int64_t>(n) * plane + p] = best;
    }
  }
  return out;
}

}  // namespace caepl
