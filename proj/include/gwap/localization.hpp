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

// From weight map to box: min-max normalization, Otsu or relative
// thresholding, 8-connected component labeling, largest-component box,
// bilinear upscaling and multi-scale fusion. All pure functions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gwap/bbox.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

/// Min-max normalization to [0, 1]. A constant map has no meaningful
/// normalization and is reported as an error; callers decide the fallback.
template <typename S>
Tensor<S> normalize_heatmap(const Tensor<S>& m) {
  if (m.rank() != 2) {
    throw ShapeError("normalize_heatmap: need HxW, got " + m.shape_string());
  }
  const S lo = m.array().minCoeff();
  const S hi = m.array().maxCoeff();
  if (!(hi > lo)) {
    throw NumericError("normalize_heatmap: degenerate constant map");
  }
  Tensor<S> out(m.shape());
  out.array() = (m.array() - lo) / (hi - lo);
  return out;
}

/// Histogram of a [0,1] map into equal-width bins; value v lands in bin
/// min(bins-1, floor(v*bins)).
template <typename S>
std::vector<std::int64_t> value_histogram(const Tensor<S>& m, int bins) {
  if (m.rank() != 2) {
    throw ShapeError("value_histogram: need HxW, got " + m.shape_string());
  }
  if (bins < 2) {
    throw ValidationError("value_histogram: need at least 2 bins");
  }
  std::vector<std::int64_t> hist(static_cast<std::size_t>(bins), 0);
  for (typename Tensor<S>::Index i = 0; i < m.size(); ++i) {
    const double v = static_cast<double>(m[i]);
    if (v < 0.0 || v > 1.0) {
      throw NumericError("value_histogram: value " + std::to_string(v) +
                         " outside [0,1]");
    }
    const int b = std::min(bins - 1, static_cast<int>(v * bins));
    ++hist[static_cast<std::size_t>(b)];
  }
  return hist;
}

/// True when candidate (da, na0, na1) has a strictly larger between-class
/// variance than (db, nb0, nb1), where d = s0*n1 - s1*n0 for class pixel
/// counts n and class sums s of bin centers. The variance is d^2/(n0*n1) up
/// to one shared positive constant, so cross-multiplying in 128-bit keeps
/// the comparison exact and the tie rule unambiguous.
inline bool otsu_score_greater(std::int64_t da, std::int64_t na0,
                               std::int64_t na1, std::int64_t db,
                               std::int64_t nb0, std::int64_t nb1) {
  const bool a_zero = na0 == 0 || na1 == 0 || da == 0;
  const bool b_zero = nb0 == 0 || nb1 == 0 || db == 0;
  if (a_zero) return false;
  if (b_zero) return true;
  const auto sq = [](std::int64_t v) {
    const auto a = static_cast<unsigned __int128>(v < 0 ? -v : v);
    return a * a;
  };
  return sq(da) * static_cast<unsigned __int128>(nb0 * nb1) >
         sq(db) * static_cast<unsigned __int128>(na0 * na1);
}

/// Otsu's threshold over `bins` equal-width histogram bins of a [0,1] map.
/// Candidate thresholds are the bin boundaries i/bins, splitting bins [0,i)
/// from [i,bins); class means use bin centers (i+0.5)/bins. Returns the
/// boundary maximizing between-class variance w0*w1*(mu0-mu1)^2, ties broken
/// toward the lower threshold. Scores are compared in exact integer
/// arithmetic, so equal-variance candidates tie exactly.
template <typename S>
double otsu_threshold(const Tensor<S>& m, int bins = 256) {
  if (!(m.array().maxCoeff() > m.array().minCoeff())) {
    throw NumericError("otsu_threshold: degenerate constant map");
  }
  const std::vector<std::int64_t> hist = value_histogram(m, bins);
  std::int64_t n_total = 0, s_total = 0;  // s in units of 1/(2*bins)
  for (int b = 0; b < bins; ++b) {
    n_total += hist[static_cast<std::size_t>(b)];
    s_total += hist[static_cast<std::size_t>(b)] * (2 * b + 1);
  }
  int best_i = 0;
  std::int64_t best_d = 0, best_n0 = 0, best_n1 = 0;
  std::int64_t n0 = 0, s0 = 0;
  for (int i = 0; i < bins; ++i) {
    const std::int64_t n1 = n_total - n0;
    const std::int64_t s1 = s_total - s0;
    const std::int64_t d = s0 * n1 - s1 * n0;
    if (otsu_score_greater(d, n0, n1, best_d, best_n0, best_n1)) {
      best_i = i;
      best_d = d;
      best_n0 = n0;
      best_n1 = n1;
    }
    n0 += hist[static_cast<std::size_t>(i)];
    s0 += hist[static_cast<std::size_t>(i)] * (2 * i + 1);
  }
  return static_cast<double>(best_i) / bins;
}

/// 1 where the map is strictly above the threshold.
template <typename S>
Mask binarize(const Tensor<S>& m, double threshold) {
  if (m.rank() != 2) {
    throw ShapeError("binarize: need HxW, got " + m.shape_string());
  }
  if (threshold < 0.0 || threshold > 1.0) {
    throw ValidationError("binarize: threshold " + std::to_string(threshold) +
                          " outside [0,1]");
  }
  Mask mask(m.shape());
  for (typename Tensor<S>::Index i = 0; i < m.size(); ++i) {
    mask[i] = static_cast<double>(m[i]) > threshold ? 1 : 0;
  }
  return mask;
}

struct Component {
  int label = 0;  // 1-based, in first-encounter row-major order
  std::int64_t size = 0;
  BBox box;
};

struct ComponentLabeling {
  Tensor<std::int32_t> labels;  // HxW, 0 is background
  std::vector<Component> components;
};

/// 8-connected component labeling with deterministic labels: component k is
/// the k-th one whose first pixel appears in a row-major scan.
inline ComponentLabeling connected_components(const Mask& mask) {
  if (mask.rank() != 2) {
    throw ShapeError("connected_components: need HxW mask, got " +
                     mask.shape_string());
  }
  const int h = mask.extent(0), w = mask.extent(1);
  ComponentLabeling out;
  out.labels = Tensor<std::int32_t>(mask.shape());
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x) || out.labels.at(y, x) != 0) continue;
      Component comp;
      comp.label = static_cast<int>(out.components.size()) + 1;
      comp.box = BBox{x, y, x, y};
      stack.clear();
      stack.emplace_back(y, x);
      out.labels.at(y, x) = comp.label;
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        ++comp.size;
        comp.box.x0 = std::min(comp.box.x0, cx);
        comp.box.x1 = std::max(comp.box.x1, cx);
        comp.box.y0 = std::min(comp.box.y0, cy);
        comp.box.y1 = std::max(comp.box.y1, cy);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 ||
                nx >= w) {
              continue;
            }
            if (mask.at(ny, nx) && out.labels.at(ny, nx) == 0) {
              out.labels.at(ny, nx) = comp.label;
              stack.emplace_back(ny, nx);
            }
          }
        }
      }
      out.components.push_back(comp);
    }
  }
  return out;
}

/// How bbox_from_heatmap picks its binarization threshold.
struct ThresholdPolicy {
  enum class Kind { kOtsu, kRelative };
  Kind kind = Kind::kRelative;
  double tau = 0.2;
  int bins = 256;

  static ThresholdPolicy otsu(int bins = 256) {
    return ThresholdPolicy{Kind::kOtsu, 0.0, bins};
  }
  static ThresholdPolicy relative(double tau = 0.2) {
    return ThresholdPolicy{Kind::kRelative, tau, 256};
  }
};

/// Normalize a heat map and binarize it under the policy.
template <typename S>
Mask threshold_heatmap(const Tensor<S>& m,
                       const ThresholdPolicy& policy = ThresholdPolicy{}) {
  const Tensor<S> hn = normalize_heatmap(m);
  double t = 0.0;
  switch (policy.kind) {
    case ThresholdPolicy::Kind::kOtsu:
      t = otsu_threshold(hn, policy.bins);
      break;
    case ThresholdPolicy::Kind::kRelative:
      if (policy.tau < 0.0 || policy.tau > 1.0) {
        throw ValidationError("threshold_heatmap: tau outside [0,1]");
      }
      t = policy.tau;
      break;
  }
  return binarize(hn, t);
}

/// Tight box of the largest thresholded component (ties: first label). The
/// map is min-max normalized before thresholding, so the result is invariant
/// to positive affine rescaling; the relative policy then cuts at tau of the
/// (unit) max. An all-background result is an error so callers can tell
/// "nothing found" from a degenerate 1-pixel detection.
template <typename S>
BBox bbox_from_heatmap(const Tensor<S>& m,
                       const ThresholdPolicy& policy = ThresholdPolicy{}) {
  const Mask mask = threshold_heatmap(m, policy);
  const ComponentLabeling labeling = connected_components(mask);
  if (labeling.components.empty()) {
    throw NumericError("bbox_from_heatmap: empty detection");
  }
  const Component* best = &labeling.components[0];
  for (const Component& c : labeling.components) {
    if (c.size > best->size) best = &c;
  }
  return best->box;
}

/// Bilinear upscale with corner alignment: source coordinate of output x is
/// x * (W_src - 1) / (W_dst - 1), so corners map to corners and a constant
/// map stays constant.
template <typename S>
Tensor<S> upscale_map(const Tensor<S>& m, int target_h, int target_w) {
  if (m.rank() != 2) {
    throw ShapeError("upscale_map: need HxW, got " + m.shape_string());
  }
  const int sh = m.extent(0), sw = m.extent(1);
  if (target_h < sh || target_w < sw) {
    throw ValidationError("upscale_map: target " + std::to_string(target_w) +
                          "x" + std::to_string(target_h) +
                          " smaller than source " + m.shape_string());
  }
  Tensor<S> out({target_h, target_w});
  const double ry =
      target_h > 1 ? static_cast<double>(sh - 1) / (target_h - 1) : 0.0;
  const double rx =
      target_w > 1 ? static_cast<double>(sw - 1) / (target_w - 1) : 0.0;
  for (int y = 0; y < target_h; ++y) {
    const double fy = y * ry;
    const int y0 = std::min(sh - 1, static_cast<int>(fy));
    const int y1 = std::min(sh - 1, y0 + 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double fx = x * rx;
      const int x0 = std::min(sw - 1, static_cast<int>(fx));
      const int x1 = std::min(sw - 1, x0 + 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * m.at(y0, x0) + wx * m.at(y0, x1);
      const double bot = (1.0 - wx) * m.at(y1, x0) + wx * m.at(y1, x1);
      out.at(y, x) = static_cast<S>((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

/// Upscale every map to the target extent, then average cellwise.
template <typename S>
Tensor<S> multiscale_average(const std::vector<Tensor<S>>& maps, int target_h,
                             int target_w) {
  if (maps.empty()) {
    throw ValidationError("multiscale_average: no maps");
  }
  Tensor<S> acc({target_h, target_w});
  for (const Tensor<S>& m : maps) {
    const Tensor<S> up = upscale_map(m, target_h, target_w);
    acc.array() += up.array();
  }
  acc.array() /= static_cast<S>(maps.size());
  return acc;
}

/// Maps an image-resolution box to feature resolution, rounding outward.
/// A box that would collapse is expanded to a single cell.
inline BBox feature_box(const BBox& b, int feat_h, int feat_w, int image_h,
                        int image_w) {
  b.require_valid("feature_box");
  if (feat_h < 1 || feat_w < 1 || image_h < feat_h || image_w < feat_w) {
    throw ValidationError("feature_box: feature grid must not exceed image");
  }
  const double sx = static_cast<double>(feat_w) / image_w;
  const double sy = static_cast<double>(feat_h) / image_h;
  BBox f;
  f.x0 = static_cast<int>(std::floor(b.x0 * sx));
  f.y0 = static_cast<int>(std::floor(b.y0 * sy));
  f.x1 = static_cast<int>(std::ceil((b.x1 + 1) * sx)) - 1;
  f.y1 = static_cast<int>(std::ceil((b.y1 + 1) * sy)) - 1;
  f.x0 = std::clamp(f.x0, 0, feat_w - 1);
  f.y0 = std::clamp(f.y0, 0, feat_h - 1);
  f.x1 = std::clamp(f.x1, f.x0, feat_w - 1);
  f.y1 = std::clamp(f.y1, f.y0, feat_h - 1);
  return f;
}

/// Weight map from ground-truth boxes: uniform over the union of the boxes
/// mapped to feature resolution, zero outside, summing to one.
template <typename S>
Tensor<S> gt_weight_map(const std::vector<BBox>& boxes, int feat_h, int feat_w,
                        int image_h, int image_w) {
  if (boxes.empty()) {
    throw ValidationError("gt_weight_map: needs at least one box");
  }
  Tensor<S> map({feat_h, feat_w}, S(0));
  std::int64_t inside = 0;
  for (const BBox& b : boxes) {
    const BBox f = feature_box(b, feat_h, feat_w, image_h, image_w);
    for (int y = f.y0; y <= f.y1; ++y) {
      for (int x = f.x0; x <= f.x1; ++x) {
        if (map.at(y, x) == S(0)) {
          map.at(y, x) = S(1);
          ++inside;
        }
      }
    }
  }
  map.array() /= static_cast<S>(inside);
  return map;
}

}  // namespace gwap
