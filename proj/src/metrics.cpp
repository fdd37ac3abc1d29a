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
#include "gwap/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace gwap {

MaskCounts mask_counts(const Mask& mask, const Mask& gt) {
  require_same_shape(mask, gt, "mask_counts");
  MaskCounts c;
  for (Mask::Index i = 0; i < mask.size(); ++i) {
    const bool m = mask[i] != 0, g = gt[i] != 0;
    c.intersection += (m && g) ? 1 : 0;
    c.mask += m ? 1 : 0;
    c.gt += g ? 1 : 0;
  }
  return c;
}

FMeasure f_measure(const MaskCounts& counts, double beta2) {
  if (counts.gt == 0) {
    throw ValidationError("f_measure: empty ground-truth mask");
  }
  FMeasure out;
  out.precision = counts.mask == 0 ? 0.0
                                   : static_cast<double>(counts.intersection) /
                                         static_cast<double>(counts.mask);
  out.recall = static_cast<double>(counts.intersection) /
               static_cast<double>(counts.gt);
  if (out.precision == 0.0 && out.recall == 0.0) {
    out.f = 0.0;
  } else {
    out.f = (1.0 + beta2) * out.precision * out.recall /
            (beta2 * out.precision + out.recall);
  }
  return out;
}

FMeasure f_measure(const Mask& mask, const Mask& gt, double beta2) {
  return f_measure(mask_counts(mask, gt), beta2);
}

double iou(const BBox& a, const BBox& b) {
  a.require_valid("iou");
  b.require_valid("iou");
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double top1_loc_error(const std::vector<LocRecord>& records,
                      double iou_threshold) {
  if (records.empty()) {
    throw ValidationError("top1_loc_error: no records");
  }
  std::int64_t correct = 0;
  for (const LocRecord& r : records) {
    if (r.gt_boxes.empty()) {
      throw ValidationError("top1_loc_error: record without ground-truth boxes");
    }
    if (r.pred_class != r.gt_class || !r.has_pred_box) continue;
    for (const BBox& g : r.gt_boxes) {
      if (iou(r.pred_box, g) >= iou_threshold) {
        ++correct;
        break;
      }
    }
  }
  return 1.0 - static_cast<double>(correct) / static_cast<double>(records.size());
}

double topk_cls_error(const std::vector<std::vector<double>>& scores,
                      const std::vector<int>& gt_class, int k) {
  if (scores.empty() || scores.size() != gt_class.size()) {
    throw ValidationError("topk_cls_error: score/label count mismatch");
  }
  const int classes = static_cast<int>(scores[0].size());
  if (k < 1 || k > classes) {
    throw ValidationError("topk_cls_error: k outside [1, C]");
  }
  std::int64_t errors = 0;
  std::vector<int> order(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::vector<double>& s = scores[i];
    if (static_cast<int>(s.size()) != classes) {
      throw ValidationError("topk_cls_error: ragged score rows");
    }
    if (gt_class[i] < 0 || gt_class[i] >= classes) {
      throw ValidationError("topk_cls_error: ground-truth class out of range");
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&s](int a, int b) {
      return s[static_cast<std::size_t>(a)] != s[static_cast<std::size_t>(b)]
                 ? s[static_cast<std::size_t>(a)] > s[static_cast<std::size_t>(b)]
                 : a < b;
    });
    bool hit = false;
    for (int j = 0; j < k; ++j) {
      hit = hit || order[static_cast<std::size_t>(j)] == gt_class[i];
    }
    errors += hit ? 0 : 1;
  }
  return static_cast<double>(errors) / static_cast<double>(scores.size());
}

namespace {

// Precision/recall after each rank, scores descending (ties: lower index
// first).
void pr_curve(const std::vector<double>& scores,
              const std::vector<std::uint8_t>& labels,
              std::vector<double>& precision, std::vector<double>& recall) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ValidationError("average_precision: score/label count mismatch");
  }
  std::int64_t positives = 0;
  for (std::uint8_t l : labels) positives += l ? 1 : 0;
  if (positives == 0) {
    throw ValidationError("average_precision: no positive labels");
  }
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](int a, int b) {
    return scores[static_cast<std::size_t>(a)] !=
                   scores[static_cast<std::size_t>(b)]
               ? scores[static_cast<std::size_t>(a)] >
                     scores[static_cast<std::size_t>(b)]
               : a < b;
  });
  precision.resize(scores.size());
  recall.resize(scores.size());
  std::int64_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    tp += labels[static_cast<std::size_t>(order[r])] ? 1 : 0;
    precision[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
    recall[r] = static_cast<double>(tp) / static_cast<double>(positives);
  }
}

}  // namespace

double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& labels, ApMode mode) {
  std::vector<double> precision, recall;
  pr_curve(scores, labels, precision, recall);
  const std::size_t n = precision.size();
  if (mode == ApMode::kVoc07_11pt) {
    double sum = 0.0;
    for (int step = 0; step <= 10; ++step) {
      const double r = step / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] >= r) best = std::max(best, precision[i]);
      }
      sum += best;
    }
    return sum / 11.0;
  }
  // All-points: integrate the running-max precision envelope over recall.
  std::vector<double> envelope = precision;
  for (std::size_t i = n - 1; i-- > 0;) {
    envelope[i] = std::max(envelope[i], envelope[i + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * envelope[i];
    prev_recall = recall[i];
  }
  return ap;
}

double mean_average_precision(
    const std::vector<std::vector<double>>& scores,
    const std::vector<std::vector<std::uint8_t>>& labels, ApMode mode) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw ValidationError("mean_average_precision: class count mismatch");
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    sum += average_precision(scores[c], labels[c], mode);
  }
  return sum / static_cast<double>(scores.size());
}

}  // namespace gwap
