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

// Evaluation pipeline: runs a model over a dataset and reports
// classification quality (mAP, top-k error, multi-label accuracy) and
// localization quality (F-measure against ground-truth masks, top-1
// localization error against boxes). Heat maps are compared at image
// resolution; multi-scale mode upscales the input, collects the map at
// each scale, and averages the upscaled maps.

#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gwap/dataset.hpp"
#include "gwap/localization.hpp"
#include "gwap/metrics.hpp"
#include "gwap/model.hpp"

namespace gwap {

struct EvalConfig {
  std::vector<int> scales = {1};  // input upscale factors
  ThresholdPolicy threshold = ThresholdPolicy::otsu();
  ApMode ap_mode = ApMode::kVoc07_11pt;
  int top_k = 1;
  double iou_threshold = 0.5;
  bool use_gt_alpha = false;  // oracle weight map from ground-truth boxes
};

struct EvalReport {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

  int images = 0;
  bool single_label = false;
  double accuracy = kUnset;   // multi-label: per-(image,class); single: top-1
  double map = kUnset;
  std::vector<double> per_class_ap;
  double topk_error = kUnset;      // single-label only
  double top1_loc_error = kUnset;  // single-label with boxes only
  double f_mean = kUnset;          // mean per-image (or per-pair) F
  double f_pooled = kUnset;        // F from pooled pixel counts
  std::vector<double> per_class_f;  // per-class-map heads only
  double per_class_f_mean = kUnset;
};

/// Localization maps of one image, upscaled to image resolution and
/// averaged over the configured scales. Heads with one shared map fill
/// `shared`; heads with per-class maps fill `per_class` (size C).
template <typename S>
struct SampleMaps {
  Tensor<S> logits;  // from the 1x scale
  Tensor<S> shared;
  std::vector<Tensor<S>> per_class;
};

namespace detail {

template <typename S>
Tensor<S> upscale_image(const Tensor<S>& img, int factor) {
  if (factor == 1) return img;
  const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
  Tensor<S> out({c, h * factor, w * factor});
  for (int ch = 0; ch < c; ++ch) {
    Tensor<S> plane({h, w});
    std::copy(img.data() + static_cast<std::size_t>(ch) * h * w,
              img.data() + static_cast<std::size_t>(ch + 1) * h * w,
              plane.data());
    const Tensor<S> up = upscale_map(plane, h * factor, w * factor);
    std::copy(up.data(), up.data() + up.size(),
              out.data() + static_cast<std::size_t>(ch) * up.size());
  }
  return out;
}

template <typename S>
Tensor<S> channel_slice(const Tensor<S>& stack, int c) {
  const int h = stack.extent(1), w = stack.extent(2);
  Tensor<S> out({h, w});
  std::copy(stack.data() + static_cast<std::size_t>(c) * h * w,
            stack.data() + static_cast<std::size_t>(c + 1) * h * w,
            out.data());
  return out;
}

inline int argmax_class(const std::vector<double>& scores) {
  int best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = static_cast<int>(c);
  }
  return best;
}

}  // namespace detail

/// Forward passes at every configured scale; logits come from the 1x pass.
/// gt_boxes (image-resolution, any class) are only consulted when
/// cfg.use_gt_alpha is set.
template <typename S>
SampleMaps<S> eval_sample_maps(const Model<S>& model,
                               const Tensor<S>& image_unit,
                               const EvalConfig& cfg,
                               const std::vector<BBox>* gt_boxes = nullptr) {
  if (cfg.scales.empty()) {
    throw ValidationError("eval: scale list is empty");
  }
  const int ih = image_unit.extent(1), iw = image_unit.extent(2);
  const HeadKind head = model.head();
  const bool per_class_maps = !head_is_agnostic_attention(head);
  SampleMaps<S> out;
  std::vector<Tensor<S>> shared_acc;
  std::vector<std::vector<Tensor<S>>> class_acc(
      per_class_maps ? model.classes() : 0);
  bool have_logits = false;

  Tape<S> tape;
  for (const int scale : cfg.scales) {
    if (scale < 1) {
      throw ValidationError("eval: scales must be >= 1");
    }
    tape.clear();
    BoundModel<S> b = model.bind(tape, false);
    const Tensor<S> img = detail::upscale_image(image_unit, scale);
    std::optional<Tensor<S>> gt_alpha;
    if (cfg.use_gt_alpha) {
      if (!gt_boxes || gt_boxes->empty()) {
        throw ValidationError("eval: oracle weight maps need boxes");
      }
      const int d = model.backbone().downsample();
      gt_alpha = gt_weight_map<S>(*gt_boxes, img.extent(1) / d,
                                  img.extent(2) / d, ih, iw);
    }
    ModelOutput<S> o =
        model.forward(tape, b, img, gt_alpha ? &*gt_alpha : nullptr);
    if (scale == 1) {
      out.logits = o.logits.value();
      have_logits = true;
    }
    if (head_is_agnostic_attention(head) ||
        (head == HeadKind::kGap && gt_alpha)) {
      shared_acc.push_back(upscale_map(o.alpha->value(), ih, iw));
    } else if (head == HeadKind::kGwapSpecific) {
      const Tensor<S>& alphas = o.alphas->value();
      for (int c = 0; c < model.classes(); ++c) {
        class_acc[c].push_back(
            upscale_map(detail::channel_slice(alphas, c), ih, iw));
      }
    } else {
      // gap / gmp / lse: class activation maps from the classifier weights.
      Var<S> cam = channel_linear(o.features, *b.cls_w);
      const Tensor<S>& maps = cam.value();
      for (int c = 0; c < model.classes(); ++c) {
        class_acc[c].push_back(
            upscale_map(detail::channel_slice(maps, c), ih, iw));
      }
    }
  }
  if (!have_logits) {
    throw ValidationError("eval: scale list must include 1");
  }
  if (!shared_acc.empty()) {
    out.shared = multiscale_average(shared_acc, ih, iw);
  }
  for (auto& acc : class_acc) {
    if (!acc.empty()) {
      out.per_class.push_back(multiscale_average(acc, ih, iw));
    }
  }
  return out;
}

template <typename S>
EvalReport evaluate(const Model<S>& model, const LoadedDataset& data,
                    const EvalConfig& cfg) {
  if (model.classes() != data.classes()) {
    throw ValidationError("eval: model has " +
                          std::to_string(model.classes()) +
                          " classes, dataset has " +
                          std::to_string(data.classes()));
  }
  const int classes = data.classes();
  EvalReport rep;
  rep.images = static_cast<int>(data.size());
  rep.single_label = data.single_label();

  std::vector<std::vector<double>> class_scores(classes);
  std::vector<std::vector<std::uint8_t>> class_labels(classes);
  std::vector<std::vector<double>> image_scores;
  std::vector<int> gt_classes;
  std::vector<LocRecord> loc_records;
  bool any_boxes = true;
  std::int64_t correct_pairs = 0, total_pairs = 0;
  std::vector<double> f_values;
  MaskCounts pooled;
  std::vector<std::vector<double>> per_class_f(classes);

  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::vector<BBox> boxes = data.all_boxes(i);
    const SampleMaps<S> maps =
        eval_sample_maps(model, to_unit<S>(data.images[i]), cfg,
                         cfg.use_gt_alpha ? &boxes : nullptr);
    std::vector<double> scores(classes);
    for (int c = 0; c < classes; ++c) {
      scores[c] = static_cast<double>(maps.logits[c]);
      class_scores[c].push_back(scores[c]);
      class_labels[c].push_back(data.record(i).has_label(c) ? 1 : 0);
    }
    image_scores.push_back(scores);

    if (rep.single_label) {
      gt_classes.push_back(data.label_of(i));
      correct_pairs +=
          detail::argmax_class(scores) == gt_classes.back() ? 1 : 0;
      ++total_pairs;
    } else {
      for (int c = 0; c < classes; ++c) {
        const bool pred = scores[c] > 0.0;
        correct_pairs += pred == data.record(i).has_label(c) ? 1 : 0;
        ++total_pairs;
      }
    }

    // F-measure against masks.
    if (!maps.per_class.empty()) {
      for (int c = 0; c < classes; ++c) {
        if (!data.record(i).has_label(c)) continue;
        const Mask gt = data.load_class_mask(i, c);
        if (gt.empty()) continue;
        Mask pred;
        try {
          pred = threshold_heatmap(maps.per_class[c], cfg.threshold);
        } catch (const NumericError&) {
          pred = Mask(gt.shape(), 0);  // degenerate map counts as a miss
        }
        const MaskCounts counts = mask_counts(pred, gt);
        const double f = f_measure(counts).f;
        f_values.push_back(f);
        per_class_f[c].push_back(f);
        pooled.intersection += counts.intersection;
        pooled.mask += counts.mask;
        pooled.gt += counts.gt;
      }
    } else {
      const Mask gt = data.load_union_mask(i);
      if (!gt.empty()) {
        Mask pred;
        try {
          pred = threshold_heatmap(maps.shared, cfg.threshold);
        } catch (const NumericError&) {
          pred = Mask(gt.shape(), 0);
        }
        const MaskCounts counts = mask_counts(pred, gt);
        f_values.push_back(f_measure(counts).f);
        pooled.intersection += counts.intersection;
        pooled.mask += counts.mask;
        pooled.gt += counts.gt;
      }
    }

    // Top-1 localization error.
    if (rep.single_label) {
      const int gt_cls = gt_classes.back();
      const std::vector<BBox> gt_boxes = data.boxes_of(i, gt_cls);
      if (gt_boxes.empty()) {
        any_boxes = false;
      } else if (any_boxes) {
        LocRecord r;
        r.gt_class = gt_cls;
        r.gt_boxes = gt_boxes;
        r.pred_class = detail::argmax_class(scores);
        const Tensor<S>& map = maps.per_class.empty()
                                   ? maps.shared
                                   : maps.per_class[r.pred_class];
        try {
          r.pred_box = bbox_from_heatmap(map, cfg.threshold);
          r.has_pred_box = true;
        } catch (const NumericError&) {
          r.has_pred_box = false;
        }
        loc_records.push_back(std::move(r));
      }
    }
  }

  rep.accuracy = static_cast<double>(correct_pairs) / total_pairs;
  for (int c = 0; c < classes; ++c) {
    bool any_pos = false;
    for (const std::uint8_t y : class_labels[c]) any_pos |= y != 0;
    rep.per_class_ap.push_back(
        any_pos ? average_precision(class_scores[c], class_labels[c],
                                    cfg.ap_mode)
                : EvalReport::kUnset);
  }
  double ap_sum = 0.0;
  int ap_n = 0;
  for (const double ap : rep.per_class_ap) {
    if (!std::isnan(ap)) {
      ap_sum += ap;
      ++ap_n;
    }
  }
  if (ap_n > 0) rep.map = ap_sum / ap_n;
  if (rep.single_label) {
    rep.topk_error = topk_cls_error(image_scores, gt_classes, cfg.top_k);
    if (any_boxes && !loc_records.empty()) {
      rep.top1_loc_error = top1_loc_error(loc_records, cfg.iou_threshold);
    }
  }
  if (!f_values.empty()) {
    double s = 0.0;
    for (const double f : f_values) s += f;
    rep.f_mean = s / static_cast<double>(f_values.size());
    rep.f_pooled = f_measure(pooled).f;
  }
  double pcf_sum = 0.0;
  int pcf_n = 0;
  for (int c = 0; c < classes; ++c) {
    if (per_class_f[c].empty()) {
      rep.per_class_f.push_back(EvalReport::kUnset);
      continue;
    }
    double s = 0.0;
    for (const double f : per_class_f[c]) s += f;
    rep.per_class_f.push_back(s / static_cast<double>(per_class_f[c].size()));
    pcf_sum += rep.per_class_f.back();
    ++pcf_n;
  }
  if (pcf_n > 0) rep.per_class_f_mean = pcf_sum / pcf_n;
  return rep;
}

namespace detail {

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

/// Flat key-value report.
inline void write_report_text(const EvalReport& r, std::ostream& out) {
  out << "images = " << r.images << "\n";
  out << "single_label = " << (r.single_label ? "true" : "false") << "\n";
  out << "accuracy = " << detail::format_metric(r.accuracy) << "\n";
  out << "map = " << detail::format_metric(r.map) << "\n";
  out << "topk_error = " << detail::format_metric(r.topk_error) << "\n";
  out << "top1_loc_error = " << detail::format_metric(r.top1_loc_error)
      << "\n";
  out << "f_mean = " << detail::format_metric(r.f_mean) << "\n";
  out << "f_pooled = " << detail::format_metric(r.f_pooled) << "\n";
  out << "per_class_f_mean = " << detail::format_metric(r.per_class_f_mean)
      << "\n";
}

/// Per-class CSV: class index, name, AP, per-class F.
inline void write_report_csv(const EvalReport& r,
                             const std::vector<std::string>& class_names,
                             std::ostream& out) {
  out << "class,name,ap,f\n";
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const double ap = c < r.per_class_ap.size() ? r.per_class_ap[c]
                                                : EvalReport::kUnset;
    const double f =
        c < r.per_class_f.size() ? r.per_class_f[c] : EvalReport::kUnset;
    out << c << "," << class_names[c] << "," << detail::format_metric(ap)
        << "," << detail::format_metric(f) << "\n";
  }
}

}  // namespace gwap
