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

// Evaluation metrics: mask F-measure, box IoU, top-k classification error,
// top-1 localization error, average precision.

#pragma once

#include <cstdint>
#include <vector>

#include "gwap/bbox.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

struct MaskCounts {
  std::int64_t intersection = 0;
  std::int64_t mask = 0;
  std::int64_t gt = 0;
};

/// Pixel counts feeding the F-measure; aggregatable across images for the
/// pooled variant.
MaskCounts mask_counts(const Mask& mask, const Mask& gt);

struct FMeasure {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Weighted F-measure from raw counts:
///   P = |M n G| / |M| (0 for an empty M), R = |M n G| / |G|,
///   F = (1 + beta2) P R / (beta2 P + R), 0 when P = R = 0.
/// An empty ground truth leaves R undefined and is an error.
FMeasure f_measure(const MaskCounts& counts, double beta2 = 0.3);
FMeasure f_measure(const Mask& mask, const Mask& gt, double beta2 = 0.3);

/// Intersection-over-union with inclusive pixel areas.
double iou(const BBox& a, const BBox& b);

/// One image's localization outcome.
struct LocRecord {
  int gt_class = -1;
  std::vector<BBox> gt_boxes;  // ground-truth boxes of gt_class
  int pred_class = -1;
  bool has_pred_box = false;   // box extraction can fail (empty detection)
  BBox pred_box;
};

/// Fraction of images that are NOT (top-1 class correct AND predicted box
/// reaching IoU >= 0.5 with some ground-truth box of that class).
double top1_loc_error(const std::vector<LocRecord>& records,
                      double iou_threshold = 0.5);

/// Fraction of images whose ground-truth class is absent from the k
/// highest scores. Ties rank the lower class index first.
double topk_cls_error(const std::vector<std::vector<double>>& scores,
                      const std::vector<int>& gt_class, int k);

enum class ApMode { kVoc07_11pt, kAllPoints };

/// Average precision of a ranked binary retrieval problem. Scores are
/// ranked descending with ties broken by lower index first.
///   kVoc07_11pt: mean over recall thresholds {0, 0.1, ..., 1.0} of the max
///     precision at recall >= threshold (0 when unreachable).
///   kAllPoints: area under the interpolated precision envelope.
/// At least one positive label is required.
double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels, ApMode mode);

/// Mean AP over classes; scores[c][i] and labels[c][i] index class c,
/// example i.
double mean_average_precision(
    const std::vector<std::vector<double>>& scores,
    const std::vector<std::vector<std::uint8_t>>& labels, ApMode mode);

}  // namespace gwap
