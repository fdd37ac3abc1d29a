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

// Spatial pooling over score or feature maps, plus the attention heads that
// turn a feature map into normalized spatial weight maps. A weight map is
// non-negative and sums to 1 over its spatial extent; every head output is
// checked against that contract before it is used.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gwap/ops.hpp"
#include "gwap/tape.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

/// Tolerance for the weight-map sum check. Singles accumulate visible
/// rounding over a few thousand cells; doubles do not.
template <typename S>
constexpr double weight_map_tol() {
  return sizeof(S) == sizeof(double) ? 1e-6 : 1e-4;
}

/// Enforce the weight-map contract on an HxW (or flat) map.
template <typename S>
void validate_weight_map(const Tensor<S>& m, double tol = weight_map_tol<S>()) {
  if ((m.array() < S(0)).any()) {
    throw NumericError("weight map has negative entries");
  }
  const double s = static_cast<double>(m.array().template cast<double>().sum());
  if (std::abs(s - 1.0) > tol) {
    throw NumericError("weight map sums to " + std::to_string(s) +
                       ", expected 1");
  }
}

/// Enforce the weight-map contract on every channel of a CxHxW stack.
template <typename S>
void validate_weight_map_stack(const Tensor<S>& m,
                               double tol = weight_map_tol<S>()) {
  if (m.rank() != 3) {
    throw ShapeError("weight map stack must be CxHxW, got " +
                     m.shape_string());
  }
  const auto hw = static_cast<typename Tensor<S>::Index>(m.extent(1)) *
                  m.extent(2);
  for (int c = 0; c < m.extent(0); ++c) {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> ch(m.data() + c * hw,
                                                            hw);
    if ((ch < S(0)).any()) {
      throw NumericError("weight map channel " + std::to_string(c) +
                         " has negative entries");
    }
    const double s = static_cast<double>(ch.template cast<double>().sum());
    if (std::abs(s - 1.0) > tol) {
      throw NumericError("weight map channel " + std::to_string(c) +
                         " sums to " + std::to_string(s) + ", expected 1");
    }
  }
}

namespace detail {

template <typename S>
const Tensor<S>& pool_input(const Var<S>& m, const char* op) {
  const Tensor<S>& v = tape_of(m, op).value(m);
  if (v.rank() != 3) {
    throw ShapeError(std::string(op) + ": need CxHxW, got " +
                     v.shape_string());
  }
  return v;
}

}  // namespace detail

/// Global max pooling. The subgradient flows to the first maximal cell in
/// row-major order of each channel.
template <typename S>
Var<S> gmp(const Var<S>& m) {
  const Tensor<S>& v = detail::pool_input(m, "gmp");
  auto& t = *m.tape;
  const int c = v.extent(0);
  const auto hw = v.size() / c;
  Tensor<S> out({c});
  std::vector<typename Tensor<S>::Index> arg(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> ch(v.data() + i * hw,
                                                            hw);
    typename Tensor<S>::Index j = 0;
    out[i] = ch.maxCoeff(&j);
    arg[static_cast<std::size_t>(i)] = j;
  }
  return t.op(std::move(out), {m.id},
              [m, hw, arg = std::move(arg),
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const Tensor<S>& g = t.grad_at(r);
                Tensor<S>& gm = t.grad_buffer(m.id);
                for (std::size_t i = 0; i < arg.size(); ++i) {
                  gm[static_cast<typename Tensor<S>::Index>(i) * hw + arg[i]] +=
                      g[static_cast<typename Tensor<S>::Index>(i)];
                }
              });
}

/// Global average pooling: per-channel spatial mean.
template <typename S>
Var<S> gap(const Var<S>& m) {
  const Tensor<S>& v = detail::pool_input(m, "gap");
  auto& t = *m.tape;
  const int c = v.extent(0);
  const auto hw = v.size() / c;
  Tensor<S> out({c});
  out.matrix(c, 1).col(0) = v.matrix(c, hw).rowwise().mean();
  return t.op(std::move(out), {m.id},
              [m, c, hw, r = static_cast<std::int32_t>(t.node_count())](
                  Tape<S>& t) {
                const auto g = t.grad_at(r).matrix(c, 1);
                t.grad_buffer(m.id).matrix(c, hw).colwise() +=
                    g.col(0) / static_cast<S>(hw);
              });
}

/// Log-sum-exp pooling with sharpness r > 0:
///   (1/r) * log(mean(exp(r * m)))  per channel,
/// evaluated against the channel max so large r stays finite. Gradients are
/// the per-channel softmax of r * m.
template <typename S>
Var<S> lse_pool(const Var<S>& m, S r) {
  if (!(r > S(0))) {
    throw ValidationError("lse_pool: sharpness must be positive");
  }
  const Tensor<S>& v = detail::pool_input(m, "lse_pool");
  auto& t = *m.tape;
  const int c = v.extent(0);
  const auto hw = v.size() / c;
  Tensor<S> out({c});
  for (int i = 0; i < c; ++i) {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> ch(v.data() + i * hw,
                                                            hw);
    const S mx = ch.maxCoeff();
    const S mean_exp = ((ch - mx) * r).exp().mean();
    out[i] = mx + std::log(mean_exp) / r;
  }
  return t.op(std::move(out), {m.id},
              [m, c, hw, r2 = r,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const Tensor<S>& g = t.grad_at(r);
                const Tensor<S>& v = t.value(m);
                Tensor<S>& gm = t.grad_buffer(m.id);
                for (int i = 0; i < c; ++i) {
                  Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> ch(
                      v.data() + i * hw, hw);
                  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> gc(
                      gm.data() + i * hw, hw);
                  Eigen::Array<S, Eigen::Dynamic, 1> w =
                      ((ch - ch.maxCoeff()) * r2).exp();
                  gc += g[i] * (w / w.sum());
                }
              });
}

/// Weighted spatial pooling of a CxHxW stack by one shared HxW weight map:
/// out[c] = sum_xy alpha(x, y) * maps[c](x, y). Both operands receive
/// gradients.
template <typename S>
Var<S> gwap_scores(const Var<S>& maps, const Var<S>& alpha) {
  auto& t = detail::same_tape(maps, alpha, "gwap_scores");
  const Tensor<S>& mv = maps.value();
  const Tensor<S>& av = alpha.value();
  if (mv.rank() != 3 || av.rank() != 2 || av.extent(0) != mv.extent(1) ||
      av.extent(1) != mv.extent(2)) {
    throw ShapeError("gwap_scores: got maps " + mv.shape_string() +
                     " and weights " + av.shape_string());
  }
  const int c = mv.extent(0);
  const auto hw = av.size();
  Tensor<S> out({c});
  out.matrix(c, 1).noalias() = mv.matrix(c, hw) * av.matrix(hw, 1);
  return t.op(std::move(out), {maps.id, alpha.id},
              [maps, alpha, c, hw,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const auto g = t.grad_at(r).matrix(c, 1);
                if (t.needs_grad(maps)) {
                  t.grad_buffer(maps.id).matrix(c, hw).noalias() +=
                      g * t.value(alpha).matrix(1, hw);
                }
                if (t.needs_grad(alpha)) {
                  t.grad_buffer(alpha.id).matrix(hw, 1).noalias() +=
                      t.value(maps).matrix(c, hw).transpose() * g;
                }
              });
}

/// Same contraction applied to a KxHxW feature stack, giving the pooled
/// feature vector of length K.
template <typename S>
Var<S> gwap_features(const Var<S>& features, const Var<S>& alpha) {
  return gwap_scores(features, alpha);
}

/// Per-class weighted pooling: out[c] = sum_xy alphas[c] * maps[c], with an
/// independent weight map per channel.
template <typename S>
Var<S> gwap_per_class(const Var<S>& maps, const Var<S>& alphas) {
  auto& t = detail::same_tape(maps, alphas, "gwap_per_class");
  require_same_shape(maps.value(), alphas.value(), "gwap_per_class");
  const Tensor<S>& mv = maps.value();
  if (mv.rank() != 3) {
    throw ShapeError("gwap_per_class: need CxHxW, got " + mv.shape_string());
  }
  const int c = mv.extent(0);
  const auto hw = mv.size() / c;
  Tensor<S> out({c});
  out.matrix(c, 1).col(0) =
      (mv.matrix(c, hw).array() * alphas.value().matrix(c, hw).array())
          .rowwise()
          .sum();
  return t.op(std::move(out), {maps.id, alphas.id},
              [maps, alphas, c, hw,
               r = static_cast<std::int32_t>(t.node_count())](Tape<S>& t) {
                const Eigen::Array<S, Eigen::Dynamic, 1> g =
                    t.grad_at(r).array();
                if (t.needs_grad(maps)) {
                  t.grad_buffer(maps.id).matrix(c, hw).array() +=
                      t.value(alphas).matrix(c, hw).array().colwise() * g;
                }
                if (t.needs_grad(alphas)) {
                  t.grad_buffer(alphas.id).matrix(c, hw).array() +=
                      t.value(maps).matrix(c, hw).array().colwise() * g;
                }
              });
}

// ---------------------------------------------------------------------------
// Attention heads
// ---------------------------------------------------------------------------

/// How the class-agnostic head turns raw attention scores into weights.
///   kFull:      exp(sigmoid(s)) / sum          (the default head)
///   kNoSigmoid: exp(s) / sum, max-stabilized   (sigmoid ablation)
///   kNoExp:     sigmoid(s) / sum               (exp ablation)
///   kSam:       softmax(s)                     (plain spatial softmax)
/// kNoSigmoid and kSam compute the same map; both names are kept because
/// they arise as different ablations of different heads.
enum class AgnosticVariant { kFull, kNoSigmoid, kNoExp, kSam };

inline const char* to_string(AgnosticVariant v) {
  switch (v) {
    case AgnosticVariant::kFull: return "full";
    case AgnosticVariant::kNoSigmoid: return "no_sigmoid";
    case AgnosticVariant::kNoExp: return "no_exp";
    case AgnosticVariant::kSam: return "sam";
  }
  return "?";
}

inline AgnosticVariant agnostic_variant_from_string(const std::string& s) {
  if (s == "full") return AgnosticVariant::kFull;
  if (s == "no_sigmoid") return AgnosticVariant::kNoSigmoid;
  if (s == "no_exp") return AgnosticVariant::kNoExp;
  if (s == "sam") return AgnosticVariant::kSam;
  throw ValidationError("unknown attention variant '" + s + "'");
}

/// Class-agnostic attention: one linear map over channels scores every cell,
/// and the variant turns scores into a single HxW weight map shared by all
/// classes. weight is 1xK, bias is a length-1 vector.
template <typename S>
Var<S> class_agnostic_weights(const Var<S>& features, const Var<S>& weight,
                              const Var<S>& bias, AgnosticVariant variant) {
  Var<S> pre = channel_linear(features, weight, bias);  // 1xHxW
  Var<S> norm;
  switch (variant) {
    case AgnosticVariant::kFull:
      norm = spatial_softmax(sigmoid(pre));
      break;
    case AgnosticVariant::kNoSigmoid:
    case AgnosticVariant::kSam:
      norm = spatial_softmax(pre);
      break;
    case AgnosticVariant::kNoExp:
      norm = normalize_by_sum(sigmoid(pre));
      break;
  }
  const Tensor<S>& v = norm.value();
  Var<S> alpha = reshape(norm, {v.extent(1), v.extent(2)});
  validate_weight_map(alpha.value());
  return alpha;
}

/// Everything the class-specific head produces for one image.
template <typename S>
struct ClassSpecificResult {
  Var<S> score_maps;  // CxHxW raw per-class score maps
  Var<S> occupancy;   // (C+1)xHxW channel-softmax including background
  Var<S> alphas;      // CxHxW weight maps, one per class
  Var<S> scores;      // C aggregated classification scores
};

/// Class-specific attention with an explicit background channel. weight is
/// (C+1)xK and bias (C+1); channel C is background. Occupancy competes
/// across channels at each cell; each foreground map combines occupancy with
/// its own squashed score, then normalizes spatially. The background channel
/// shapes the competition but never reaches the score vector.
/// `background_in_denominator` keeps the background term in the occupancy
/// normalizer (the default); disabling it restricts the normalizer to the
/// foreground channels while still exponentiating all C+1.
template <typename S>
ClassSpecificResult<S> class_specific_head(
    const Var<S>& features, const Var<S>& weight, const Var<S>& bias,
    int classes, bool background_in_denominator = true) {
  const Tensor<S>& wv = weight.value();
  if (wv.rank() != 2 || wv.extent(0) != classes + 1) {
    throw ShapeError("class_specific_head: weight must have " +
                     std::to_string(classes + 1) + " rows, got " +
                     wv.shape_string());
  }
  Var<S> shat = channel_linear(features, weight, bias);  // (C+1)xHxW
  Var<S> occ = channel_softmax(shat, background_in_denominator ? -1 : classes);
  Var<S> score_maps = slice_channels(shat, 0, classes);
  Var<S> fg_occ = slice_channels(occ, 0, classes);
  Var<S> m = mul(fg_occ, sigmoid(score_maps));
  Var<S> alphas = spatial_softmax(m);
  Var<S> scores = gwap_per_class(score_maps, alphas);
  validate_weight_map_stack(alphas.value());
  return {score_maps, occ, alphas, scores};
}

}  // namespace gwap
