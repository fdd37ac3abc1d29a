/* Copyright 2026 The gwap Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "gwap/tape.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

namespace detail {

template <typename S>
Tape<S>& same_tape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape;
}

template <typename S>
Tape<S>& tape_of(const Var<S>& a, const char* op) {
  if (!a.valid()) {
    throw Error(std::string(op) + ": invalid operand");
  }
  return *a.tape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Var<S> binary_op(const char* name, const Var<S>& a, const Var<S>& b, Fwd fwd,
                 Bwd bwd) {
  auto& t = same_tape(a, b, name);
  require_same_shape(a.value(), b.value(), name);
  Tensor<S> out(a.value().shape());
  fwd(out, a.value(), b.value());
  Var<S> r{&t, static_cast<std::int32_t>(t.node_count())};
  return t.op(std::move(out), {a.id, b.id}, [a, b, r, bwd](Tape<S>& t) {
    bwd(t, r, a, b);
  });
}

}  // namespace detail

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  return detail::binary_op<S>(
      "add", a, b,
      [](Tensor<S>& out, const Tensor<S>& av, const Tensor<S>& bv) {
        out.array() = av.array() + bv.array();
      },
      [](Tape<S>& t, Var<S> r, Var<S> a, Var<S> b) {
        const auto& g = t.grad_at(r.id);
        if (t.needs_grad(a)) t.grad_buffer(a.id).array() += g.array();
        if (t.needs_grad(b)) t.grad_buffer(b.id).array() += g.array();
      });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  return detail::binary_op<S>(
      "sub", a, b,
      [](Tensor<S>& out, const Tensor<S>& av, const Tensor<S>& bv) {
        out.array() = av.array() - bv.array();
      },
      [](Tape<S>& t, Var<S> r, Var<S> a, Var<S> b) {
        const auto& g = t.grad_at(r.id);
        if (t.needs_grad(a)) t.grad_buffer(a.id).array() += g.array();
        if (t.needs_grad(b)) t.grad_buffer(b.id).array() -= g.array();
      });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  return detail::binary_op<S>(
      "mul", a, b,
      [](Tensor<S>& out, const Tensor<S>& av, const Tensor<S>& bv) {
        out.array() = av.array() * bv.array();
      },
      [](Tape<S>& t, Var<S> r, Var<S> a, Var<S> b) {
        const auto& g = t.grad_at(r.id);
        if (t.needs_grad(a)) {
          t.grad_buffer(a.id).array() += g.array() * t.value(b).array();
        }
        if (t.needs_grad(b)) {
          t.grad_buffer(b.id).array() += g.array() * t.value(a).array();
        }
      });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
  return detail::binary_op<S>(
      "div", a, b,
      [](Tensor<S>& out, const Tensor<S>& av, const Tensor<S>& bv) {
        if ((bv.array() == S(0)).any()) {
          throw NumericError("div: division by zero");
        }
        out.array() = av.array() / bv.array();
      },
      [](Tape<S>& t, Var<S> r, Var<S> a, Var<S> b) {
        const auto& g = t.grad_at(r.id);
        const auto& bv = t.value(b);
        if (t.needs_grad(a)) {
          t.grad_buffer(a.id).array() += g.array() / bv.array();
        }
        if (t.needs_grad(b)) {
          t.grad_buffer(b.id).array() -=
              g.array() * t.value(r).array() / bv.array();
        }
      });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
  auto& t = detail::tape_of(a, "add_scalar");
  Tensor<S> out(a.value().shape());
  out.array() = a.value().array() + c;
  return t.op(std::move(out), {a.id},
              [a, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                t.grad_buffer(a.id).array() += t.grad_at(r).array();
              });
}

template <typename S>
Var<S> mul_scalar(const Var<S>& a, S c) {
  auto& t = detail::tape_of(a, "mul_scalar");
  Tensor<S> out(a.value().shape());
  out.array() = a.value().array() * c;
  return t.op(std::move(out), {a.id},
              [a, c, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                t.grad_buffer(a.id).array() += t.grad_at(r).array() * c;
              });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Var<S> exp(const Var<S>& a) {
  auto& t = detail::tape_of(a, "exp");
  Tensor<S> out(a.value().shape());
  out.array() = a.value().array().exp();
  return t.op(std::move(out), {a.id},
              [a, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                t.grad_buffer(a.id).array() +=
                    t.grad_at(r).array() * t.value({&t, r}).array();
              });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  auto& t = detail::tape_of(a, "sigmoid");
  Tensor<S> out(a.value().shape());
  // Split by sign so neither branch exponentiates a positive argument.
  const auto x = a.value().array();
  out.array() = (x >= S(0))
                    .select(S(1) / (S(1) + (-x).exp()),
                            x.exp() / (S(1) + x.exp()));
  return t.op(std::move(out), {a.id},
              [a, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const auto y = t.value({&t, r}).array();
                t.grad_buffer(a.id).array() +=
                    t.grad_at(r).array() * y * (S(1) - y);
              });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  auto& t = detail::tape_of(a, "relu");
  Tensor<S> out(a.value().shape());
  out.array() = a.value().array().max(S(0));
  return t.op(std::move(out), {a.id},
              [a, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const auto x = t.value(a).array();
                t.grad_buffer(a.id).array() +=
                    t.grad_at(r).array() * (x > S(0)).template cast<S>();
              });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, std::vector<int> shape) {
  auto& t = detail::tape_of(a, "reshape");
  Tensor<S> out(std::move(shape));
  if (out.size() != a.value().size()) {
    throw ShapeError("reshape: size mismatch " + a.value().shape_string() +
                     " -> " + out.shape_string());
  }
  std::memcpy(out.data(), a.value().data(),
              sizeof(S) * static_cast<std::size_t>(out.size()));
  return t.op(std::move(out), {a.id},
              [a, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                t.grad_buffer(a.id).array() += t.grad_at(r).array();
              });
}

/// Channels [c0, c1) of a CxHxW tensor.
template <typename S>
Var<S> slice_channels(const Var<S>& a, int c0, int c1) {
  auto& t = detail::tape_of(a, "slice_channels");
  const Tensor<S>& v = a.value();
  if (v.rank() != 3 || c0 < 0 || c1 <= c0 || c1 > v.extent(0)) {
    throw ShapeError("slice_channels: bad slice [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") of " + v.shape_string());
  }
  const int hw = v.extent(1) * v.extent(2);
  Tensor<S> out({c1 - c0, v.extent(1), v.extent(2)});
  std::memcpy(out.data(), v.data() + static_cast<std::size_t>(c0) * hw,
              sizeof(S) * static_cast<std::size_t>(out.size()));
  return t.op(std::move(out), {a.id},
              [a, c0, hw, r = static_cast<std::int32_t>(t.node_count())](
                  Tape<S>& t) {
                const auto& g = t.grad_at(r);
                Tensor<S>& ga = t.grad_buffer(a.id);
                Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(
                    ga.data() + static_cast<std::size_t>(c0) * hw, g.size()) +=
                    g.array();
              });
}

// ---------------------------------------------------------------------------
// Reductions and contractions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(const Var<S>& a) {
  auto& t = detail::tape_of(a, "sum");
  Tensor<S> out = Tensor<S>::scalar(a.value().array().sum());
  return t.op(std::move(out), {a.id},
              [a, r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                t.grad_buffer(a.id).array() += t.grad_at(r)[0];
              });
}

/// Dot with a fixed (non-differentiated) coefficient tensor of equal shape.
template <typename S>
Var<S> fixed_weighted_sum(const Var<S>& a, Tensor<S> weights) {
  auto& t = detail::tape_of(a, "fixed_weighted_sum");
  require_same_shape(a.value(), weights, "fixed_weighted_sum");
  Tensor<S> out =
      Tensor<S>::scalar((a.value().array() * weights.array()).sum());
  return t.op(std::move(out), {a.id},
              [a, w = std::move(weights),
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                t.grad_buffer(a.id).array() += t.grad_at(r)[0] * w.array();
              });
}

/// matmul(A MxK, B KxN) -> MxN, or matmul(A MxK, b K) -> M.
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  auto& t = detail::same_tape(a, b, "matmul");
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 2 && bv.rank() != 1)) {
    throw ShapeError("matmul: need MxK by KxN or K operands, got " +
                     av.shape_string() + " and " + bv.shape_string());
  }
  const int m = av.extent(0), k = av.extent(1);
  const int n = bv.rank() == 2 ? bv.extent(1) : 1;
  const int bk = bv.extent(0);
  if (bk != k) {
    throw ShapeError("matmul: inner extents differ, " + av.shape_string() +
                     " vs " + bv.shape_string());
  }
  Tensor<S> out(bv.rank() == 2 ? std::vector<int>{m, n}
                               : std::vector<int>{m});
  out.matrix(m, n).noalias() = av.matrix(m, k) * bv.matrix(k, n);
  return t.op(std::move(out), {a.id, b.id},
              [a, b, m, k, n, r = static_cast<std::int32_t>(t.node_count())](
                  Tape<S>& t) {
                const auto g = t.grad_at(r).matrix(m, n);
                if (t.needs_grad(a)) {
                  t.grad_buffer(a.id).matrix(m, k).noalias() +=
                      g * t.value(b).matrix(k, n).transpose();
                }
                if (t.needs_grad(b)) {
                  t.grad_buffer(b.id).matrix(k, n).noalias() +=
                      t.value(a).matrix(m, k).transpose() * g;
                }
              });
}

// ---------------------------------------------------------------------------
// Channel broadcast
// ---------------------------------------------------------------------------

/// x CxHxW plus a per-channel bias vector of length C, broadcast over HxW.
template <typename S>
Var<S> add_channel_bias(const Var<S>& x, const Var<S>& bias) {
  auto& t = detail::same_tape(x, bias, "add_channel_bias");
  const Tensor<S>& xv = x.value();
  const Tensor<S>& bv = bias.value();
  if (xv.rank() != 3 || bv.rank() != 1 || bv.extent(0) != xv.extent(0)) {
    throw ShapeError("add_channel_bias: got " + xv.shape_string() + " and " +
                     bv.shape_string());
  }
  const int c = xv.extent(0);
  const auto hw = static_cast<typename Tensor<S>::Index>(xv.extent(1)) *
                  xv.extent(2);
  Tensor<S> out(xv.shape());
  out.matrix(c, hw).noalias() =
      xv.matrix(c, hw).colwise() + bv.matrix(c, 1).col(0);
  return t.op(std::move(out), {x.id, bias.id},
              [x, bias, c, hw,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const auto g = t.grad_at(r).matrix(c, hw);
                if (t.needs_grad(x)) {
                  t.grad_buffer(x.id).matrix(c, hw) += g;
                }
                if (t.needs_grad(bias)) {
                  t.grad_buffer(bias.id).matrix(c, 1).col(0) += g.rowwise().sum();
                }
              });
}

/// Per-position linear map over channels: f KxHxW with weight CxK (and
/// optional bias C) gives CxHxW. Equivalent to a 1x1 convolution.
template <typename S>
Var<S> channel_linear(const Var<S>& f, const Var<S>& weight) {
  auto& t = detail::same_tape(f, weight, "channel_linear");
  const Tensor<S>& fv = f.value();
  const Tensor<S>& wv = weight.value();
  if (fv.rank() != 3 || wv.rank() != 2 || wv.extent(1) != fv.extent(0)) {
    throw ShapeError("channel_linear: got " + fv.shape_string() +
                     " and weight " + wv.shape_string());
  }
  const int k = fv.extent(0), c = wv.extent(0);
  const auto hw = static_cast<typename Tensor<S>::Index>(fv.extent(1)) *
                  fv.extent(2);
  Tensor<S> out({c, fv.extent(1), fv.extent(2)});
  out.matrix(c, hw).noalias() = wv.matrix(c, k) * fv.matrix(k, hw);
  return t.op(std::move(out), {f.id, weight.id},
              [f, weight, k, c, hw,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const auto g = t.grad_at(r).matrix(c, hw);
                if (t.needs_grad(weight)) {
                  t.grad_buffer(weight.id).matrix(c, k).noalias() +=
                      g * t.value(f).matrix(k, hw).transpose();
                }
                if (t.needs_grad(f)) {
                  t.grad_buffer(f.id).matrix(k, hw).noalias() +=
                      t.value(weight).matrix(c, k).transpose() * g;
                }
              });
}

template <typename S>
Var<S> channel_linear(const Var<S>& f, const Var<S>& weight,
                      const Var<S>& bias) {
  return add_channel_bias(channel_linear(f, weight), bias);
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeometry {
  int cin, h, w, cout, k, stride, pad, ho, wo;
};

inline ConvGeometry conv_geometry(const std::vector<int>& xs,
                                  const std::vector<int>& ws, int stride,
                                  int pad) {
  if (xs.size() != 3 || ws.size() != 4) {
    throw ShapeError("conv2d: input must be CxHxW and kernel OxIxKxK");
  }
  ConvGeometry g;
  g.cin = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.cout = ws[0];
  g.k = ws[2];
  if (ws[1] != g.cin || ws[3] != g.k) {
    throw ShapeError("conv2d: kernel " + Tensor<float>::shape_string(ws) +
                     " does not match input channels " + std::to_string(g.cin));
  }
  if (stride < 1 || pad < 0) {
    throw ValidationError("conv2d: stride must be >= 1 and pad >= 0");
  }
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k || g.ho < 1 || g.wo < 1) {
    throw ShapeError("conv2d: non-positive output extent");
  }
  return g;
}

/// Patch matrix: row (ci,ky,kx), column (oy,ox), row-major storage.
template <typename S>
Tensor<S> im2col(const Tensor<S>& x, const ConvGeometry& g) {
  const int rows = g.cin * g.k * g.k;
  const auto ncol = static_cast<typename Tensor<S>::Index>(g.ho) * g.wo;
  Tensor<S> col({rows, static_cast<int>(ncol)});
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const int r = (ci * g.k + ky) * g.k + kx;
        S* dst = col.data() + static_cast<std::size_t>(r) * ncol;
        // Valid ox range for this kx: 0 <= ox*stride - pad + kx < w.
        const int lo = std::max(0, (g.pad - kx + g.stride - 1) / g.stride);
        const int hi =
            std::min(g.wo - 1, (g.w - 1 + g.pad - kx) / g.stride);
        for (int oy = 0; oy < g.ho; ++oy, dst += g.wo) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h || lo > hi) {
            std::fill(dst, dst + g.wo, S(0));
            continue;
          }
          if (lo > 0) std::fill(dst, dst + lo, S(0));
          if (hi < g.wo - 1) std::fill(dst + hi + 1, dst + g.wo, S(0));
          const S* src = x.data() +
                         (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          if (g.stride == 1) {
            std::memcpy(dst + lo, src + lo - g.pad + kx,
                        sizeof(S) * static_cast<std::size_t>(hi - lo + 1));
          } else {
            for (int ox = lo; ox <= hi; ++ox) {
              dst[ox] = src[ox * g.stride - g.pad + kx];
            }
          }
        }
      }
    }
  }
  return col;
}

/// Scatter-add of a patch-matrix gradient back into input layout.
template <typename S>
void col2im_add(const Tensor<S>& col, const ConvGeometry& g, Tensor<S>& gx) {
  const auto ncol = static_cast<typename Tensor<S>::Index>(g.ho) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const int r = (ci * g.k + ky) * g.k + kx;
        const S* src = col.data() + static_cast<std::size_t>(r) * ncol;
        const int lo = std::max(0, (g.pad - kx + g.stride - 1) / g.stride);
        const int hi =
            std::min(g.wo - 1, (g.w - 1 + g.pad - kx) / g.stride);
        for (int oy = 0; oy < g.ho; ++oy, src += g.wo) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h || lo > hi) continue;
          S* dst = gx.data() + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = lo; ox <= hi; ++ox) {
            dst[ox * g.stride - g.pad + kx] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation convolution with bias.
/// x: CinxHxW, kernel: CoutxCinxKxK, bias: Cout. Output CoutxHoxWo with
/// Ho = floor((H + 2*pad - K)/stride) + 1.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias,
              int stride, int pad) {
  auto& t = detail::same_tape(x, kernel, "conv2d");
  detail::same_tape(kernel, bias, "conv2d");
  const detail::ConvGeometry g =
      detail::conv_geometry(x.value().shape(), kernel.value().shape(), stride,
                            pad);
  if (bias.value().rank() != 1 || bias.value().extent(0) != g.cout) {
    throw ShapeError("conv2d: bias shape " + bias.value().shape_string() +
                     " does not match output channels");
  }
  const int rows = g.cin * g.k * g.k;
  const auto ncol = static_cast<typename Tensor<S>::Index>(g.ho) * g.wo;
  Tensor<S> col = detail::im2col(x.value(), g);
  Tensor<S> out({g.cout, g.ho, g.wo});
  out.matrix(g.cout, ncol).noalias() =
      kernel.value().matrix(g.cout, rows) * col.matrix(rows, ncol);
  out.matrix(g.cout, ncol).colwise() += bias.value().matrix(g.cout, 1).col(0);
  return t.op(
      std::move(out), {x.id, kernel.id, bias.id},
      [x, kernel, bias, g, rows, ncol, col = std::move(col),
       r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
        const auto go = t.grad_at(r).matrix(g.cout, ncol);
        if (t.needs_grad(bias)) {
          t.grad_buffer(bias.id).matrix(g.cout, 1).col(0) += go.rowwise().sum();
        }
        if (t.needs_grad(kernel)) {
          t.grad_buffer(kernel.id).matrix(g.cout, rows).noalias() +=
              go * col.matrix(rows, ncol).transpose();
        }
        if (t.needs_grad(x)) {
          Tensor<S> gcol({rows, static_cast<int>(ncol)});
          gcol.matrix(rows, ncol).noalias() =
              t.value(kernel).matrix(g.cout, rows).transpose() * go;
          detail::col2im_add(gcol, g, t.grad_buffer(x.id));
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

/// Softmax over a contiguous block of length n starting at p, in place.
template <typename S>
void softmax_block(S* p, typename Tensor<S>::Index n) {
  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> v(p, n);
  const S m = v.maxCoeff();
  v = (v - m).exp();
  v /= v.sum();
}

}  // namespace detail

/// Softmax over the spatial extent. Accepts HxW (one map) or CxHxW (each
/// channel normalized independently). Every output block sums to 1.
template <typename S>
Var<S> spatial_softmax(const Var<S>& a) {
  auto& t = detail::tape_of(a, "spatial_softmax");
  const Tensor<S>& v = a.value();
  if (v.rank() != 2 && v.rank() != 3) {
    throw ShapeError("spatial_softmax: need HxW or CxHxW, got " +
                     v.shape_string());
  }
  const int channels = v.rank() == 3 ? v.extent(0) : 1;
  const auto hw = v.size() / channels;
  Tensor<S> out(v.shape());
  std::memcpy(out.data(), v.data(), sizeof(S) * static_cast<std::size_t>(v.size()));
  for (int c = 0; c < channels; ++c) {
    detail::softmax_block<S>(out.data() + c * hw, hw);
  }
  return t.op(std::move(out), {a.id},
              [a, channels, hw,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const Tensor<S>& y = t.value({&t, r});
                const Tensor<S>& g = t.grad_at(r);
                Tensor<S>& ga = t.grad_buffer(a.id);
                for (int c = 0; c < channels; ++c) {
                  Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> yc(
                      y.data() + c * hw, hw);
                  Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> gc(
                      g.data() + c * hw, hw);
                  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> out(
                      ga.data() + c * hw, hw);
                  const S dot = (gc * yc).sum();
                  out += yc * (gc - dot);
                }
              });
}

/// Softmax across channels at every spatial position; each position's
/// channel column sums to 1. `norm_channels` restricts the denominator to
/// the first n channels (numerators still cover all channels); by default
/// the denominator runs over every channel.
template <typename S>
Var<S> channel_softmax(const Var<S>& a, int norm_channels = -1) {
  auto& t = detail::tape_of(a, "channel_softmax");
  const Tensor<S>& v = a.value();
  if (v.rank() != 3) {
    throw ShapeError("channel_softmax: need CxHxW, got " + v.shape_string());
  }
  const int c = v.extent(0);
  const auto hw = v.size() / c;
  const int nc = norm_channels < 0 ? c : norm_channels;
  if (nc < 1 || nc > c) {
    throw ShapeError("channel_softmax: bad denominator channel count " +
                     std::to_string(norm_channels));
  }
  Tensor<S> out(v.shape());
  {
    const auto x = v.matrix(c, hw);
    auto y = out.matrix(c, hw);
    // Stabilize with the per-position max over the denominator channels.
    Eigen::Array<S, 1, Eigen::Dynamic> m =
        x.topRows(nc).colwise().maxCoeff().array();
    y.array() = (x.array().rowwise() - m).exp();
    Eigen::Array<S, 1, Eigen::Dynamic> denom =
        y.topRows(nc).colwise().sum().array();
    y.array().rowwise() /= denom;
  }
  return t.op(std::move(out), {a.id},
              [a, c, hw, nc,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const auto y = t.value({&t, r}).matrix(c, hw);
                const auto g = t.grad_at(r).matrix(c, hw);
                auto ga = t.grad_buffer(a.id).matrix(c, hw);
                Eigen::Array<S, 1, Eigen::Dynamic> dot =
                    (g.array() * y.array()).colwise().sum();
                // d/dx_i = y_i * g_i - y_i * [i in denominator] * sum(g*y)
                ga.array() += y.array() * g.array();
                ga.topRows(nc).array() -=
                    y.topRows(nc).array().rowwise() * dot;
              });
}

/// y = x / sum(x), over the whole tensor. The normalizer must be positive.
template <typename S>
Var<S> normalize_by_sum(const Var<S>& a) {
  auto& t = detail::tape_of(a, "normalize_by_sum");
  const S total = a.value().array().sum();
  if (!(total > S(0)) || !std::isfinite(static_cast<double>(total))) {
    throw NumericError("normalize_by_sum: degenerate map, normalizer is " +
                       std::to_string(static_cast<double>(total)));
  }
  Tensor<S> out(a.value().shape());
  out.array() = a.value().array() / total;
  return t.op(std::move(out), {a.id},
              [a, total, r = static_cast<std::int32_t>(t.node_count())](
                  Tape<S>& t) {
                const auto y = t.value({&t, r}).array();
                const auto g = t.grad_at(r).array();
                const S dot = (g * y).sum();
                t.grad_buffer(a.id).array() += (g - dot) / total;
              });
}

}  // namespace gwap
