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

// SGD training loops. Three regimes: weak-only classification, oracle
// weight-map training (attention replaced by ground-truth box maps), and
// semi+weak training that adds a box-supervised hinge on the class-specific
// score maps. Every random draw comes from per-iteration substreams of the
// config seed, so runs are bit-reproducible.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gwap/dataset.hpp"
#include "gwap/eval.hpp"
#include "gwap/localization.hpp"
#include "gwap/model.hpp"
#include "gwap/rng.hpp"

namespace gwap {

enum class TrainRegime { kWeakOnly, kGwapGt, kSemiWeak };

inline const char* to_string(TrainRegime r) {
  switch (r) {
    case TrainRegime::kWeakOnly: return "weak";
    case TrainRegime::kGwapGt: return "gwap-gt";
    case TrainRegime::kSemiWeak: return "semi-weak";
  }
  throw ValidationError("to_string: bad train regime");
}

inline TrainRegime train_regime_from_string(const std::string& s) {
  if (s == "weak") return TrainRegime::kWeakOnly;
  if (s == "gwap-gt") return TrainRegime::kGwapGt;
  if (s == "semi-weak") return TrainRegime::kSemiWeak;
  throw ValidationError("unknown regime '" + s +
                        "'; valid regimes: weak, gwap-gt, semi-weak");
}

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 8;
  int iters = 3000;
  int lr_step = 2000;  // 0 disables decay
  double lr_factor = 0.1;
  double lambda_weak = 0.1;  // weight of the box-region term (semi+weak)
  double margin = 0.5;       // regularization hinge margin
  std::uint64_t seed = 0;
  bool flip = true;          // horizontal-flip augmentation, p = 0.5
  bool single_label = false; // softmax loss instead of per-class sigmoid
  int log_every = 50;
  int eval_every = 500;      // 0 disables periodic metrics

  /// Small-network schedule tuned for the synthetic benchmark.
  static TrainConfig desk() { return TrainConfig{}; }

  /// Large-scale schedule for pretrained backbones, kept for comparison.
  static TrainConfig reference() {
    TrainConfig c;
    c.lr = 0.0005;
    c.batch = 4;
    c.iters = 60000;
    c.lr_step = 20000;
    return c;
  }

  void validate() const {
    if (!(lr > 0)) throw ValidationError("train: lr must be > 0");
    if (batch < 1) throw ValidationError("train: batch must be >= 1");
    if (iters < 0) throw ValidationError("train: iters must be >= 0");
    if (momentum < 0 || momentum >= 1) {
      throw ValidationError("train: momentum must lie in [0, 1)");
    }
    if (lambda_weak < 0) {
      throw ValidationError("train: lambda_weak must be >= 0");
    }
    if (margin < 0) throw ValidationError("train: margin must be >= 0");
    if (lr_step < 0) throw ValidationError("train: lr_step must be >= 0");
    if (!(lr_factor > 0)) {
      throw ValidationError("train: lr_factor must be > 0");
    }
  }
};

/// Momentum SGD: v <- momentum * v + g; p <- p - lr * v.
template <typename S>
void sgd_step(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& velocity,
              S lr, S momentum) {
  require_same_shape(param, grad, "sgd_step");
  require_same_shape(param, velocity, "sgd_step");
  velocity.array() = momentum * velocity.array() + grad.array();
  param.array() -= lr * velocity.array();
}

/// Sum of hinge terms max(0, margin + mean(S_c over background) - mean(S_c
/// over the class's box union)) for every class with boxes, plus the count
/// of such classes. Background cells lie outside every box of every class.
template <typename S>
std::pair<Var<S>, int> region_regularization_terms(
    const Var<S>& score_maps,
    const std::vector<std::vector<BBox>>& class_boxes, S margin, int image_h,
    int image_w) {
  const Tensor<S>& maps = score_maps.value();
  if (maps.rank() != 3) {
    throw ShapeError("region regularization: score maps must be CxHxW, got " +
                     maps.shape_string());
  }
  const int classes = maps.extent(0);
  const int fh = maps.extent(1), fw = maps.extent(2);
  if (static_cast<int>(class_boxes.size()) != classes) {
    throw ShapeError("region regularization: box lists for " +
                     std::to_string(class_boxes.size()) + " classes, maps for " +
                     std::to_string(classes));
  }

  // Rasterize per-class unions and the all-box union at feature resolution.
  Tensor<std::uint8_t> all_union({fh, fw}, std::uint8_t(0));
  std::vector<Tensor<std::uint8_t>> unions;
  for (int c = 0; c < classes; ++c) {
    Tensor<std::uint8_t> u({fh, fw}, std::uint8_t(0));
    for (const BBox& b : class_boxes[c]) {
      const BBox f = feature_box(b, fh, fw, image_h, image_w);
      for (int y = f.y0; y <= f.y1; ++y) {
        for (int x = f.x0; x <= f.x1; ++x) {
          u.at(y, x) = 1;
          all_union.at(y, x) = 1;
        }
      }
    }
    unions.push_back(std::move(u));
  }
  std::int64_t bg_count = 0;
  for (Tensor<std::uint8_t>::Index i = 0; i < all_union.size(); ++i) {
    bg_count += all_union[i] ? 0 : 1;
  }

  Var<S> total;
  int pairs = 0;
  for (int c = 0; c < classes; ++c) {
    if (class_boxes[c].empty()) continue;
    if (bg_count == 0) {
      throw ValidationError(
          "region regularization: boxes cover the whole feature map, "
          "no background cells left");
    }
    std::int64_t in_count = 0;
    for (Tensor<std::uint8_t>::Index i = 0; i < unions[c].size(); ++i) {
      in_count += unions[c][i] ? 1 : 0;
    }
    Tensor<S> w_in({1, fh, fw}, S(0));
    Tensor<S> w_bg({1, fh, fw}, S(0));
    for (Tensor<std::uint8_t>::Index i = 0; i < unions[c].size(); ++i) {
      if (unions[c][i]) {
        w_in[i] = S(1) / static_cast<S>(in_count);
      } else if (!all_union[i]) {
        w_bg[i] = S(1) / static_cast<S>(bg_count);
      }
    }
    Var<S> slice = slice_channels(score_maps, c, c + 1);
    Var<S> box_mean = fixed_weighted_sum(slice, std::move(w_in));
    Var<S> bg_mean = fixed_weighted_sum(slice, std::move(w_bg));
    Var<S> hinge = relu(add_scalar(sub(bg_mean, box_mean), margin));
    total = pairs ? add(total, hinge) : hinge;
    ++pairs;
  }
  return {total, pairs};
}

/// Mean hinge over this image's boxed classes.
template <typename S>
Var<S> region_regularization_loss(
    const Var<S>& score_maps,
    const std::vector<std::vector<BBox>>& class_boxes, S margin, int image_h,
    int image_w) {
  auto [total, pairs] = region_regularization_terms(score_maps, class_boxes,
                                                    margin, image_h, image_w);
  if (pairs == 0) {
    throw ValidationError("region regularization: no class has boxes");
  }
  return mul_scalar(total, S(1) / static_cast<S>(pairs));
}

struct TrainStats {
  int iterations = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;  // training accuracy at the last metric eval
};

namespace detail {

/// Training accuracy over a fixed prefix of the dataset.
template <typename S>
double train_accuracy(const Model<S>& model, const LoadedDataset& data,
                      bool single_label, std::size_t limit) {
  const std::size_t n = std::min(limit, data.size());
  std::int64_t correct = 0, total = 0;
  Tape<S> tape;
  for (std::size_t i = 0; i < n; ++i) {
    tape.clear();
    const ModelOutput<S> out =
        model.infer(tape, to_unit<S>(data.images[i]));
    const Tensor<S>& z = out.logits.value();
    if (single_label) {
      int best = 0;
      for (int c = 1; c < data.classes(); ++c) {
        if (z[c] > z[best]) best = c;
      }
      correct += best == data.label_of(i) ? 1 : 0;
      ++total;
    } else {
      for (int c = 0; c < data.classes(); ++c) {
        const bool pred = z[c] > S(0);
        correct += pred == data.record(i).has_label(c) ? 1 : 0;
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

/// Mean F of the head's localization maps over a fixed prefix; NaN when the
/// head has no weight map or no masks exist.
template <typename S>
double train_f_measure(const Model<S>& model, const LoadedDataset& data,
                       std::size_t limit) {
  if (model.head() != HeadKind::kGwapSpecific &&
      !head_is_agnostic_attention(model.head())) {
    return EvalReport::kUnset;
  }
  EvalConfig cfg;
  std::vector<double> fs;
  const std::size_t n = std::min(limit, data.size());
  for (std::size_t i = 0; i < n; ++i) {
    const SampleMaps<S> maps =
        eval_sample_maps(model, to_unit<S>(data.images[i]), cfg);
    const auto f_of = [&](const Tensor<S>& map, const Mask& gt) {
      Mask pred;
      try {
        pred = threshold_heatmap(map, cfg.threshold);
      } catch (const NumericError&) {
        pred = Mask(gt.shape(), 0);
      }
      fs.push_back(f_measure(pred, gt).f);
    };
    if (!maps.per_class.empty()) {
      for (int c = 0; c < data.classes(); ++c) {
        if (!data.record(i).has_label(c)) continue;
        const Mask gt = data.load_class_mask(i, c);
        if (!gt.empty()) f_of(maps.per_class[c], gt);
      }
    } else {
      const Mask gt = data.load_union_mask(i);
      if (!gt.empty()) f_of(maps.shared, gt);
    }
  }
  if (fs.empty()) return EvalReport::kUnset;
  double s = 0.0;
  for (const double f : fs) s += f;
  return s / static_cast<double>(fs.size());
}

inline std::string csv_cell(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

/// Runs the configured regime over the dataset, updating the model in
/// place. metrics_csv (optional) receives one row per log interval;
/// checkpoint_cb (optional) is invoked at every eval interval and at the
/// end, after the parameters were updated.
template <typename S>
TrainStats train(
    Model<S>& model, const LoadedDataset& data, const TrainConfig& cfg,
    TrainRegime regime, std::ostream* metrics_csv = nullptr,
    const std::function<void(int, const Model<S>&)>& checkpoint_cb = {}) {
  cfg.validate();
  if (regime == TrainRegime::kGwapGt &&
      !head_is_agnostic_attention(model.head())) {
    throw ValidationError(
        "train: oracle weight-map regime needs a class-agnostic attention "
        "head");
  }
  if (regime == TrainRegime::kSemiWeak &&
      model.head() != HeadKind::kGwapSpecific) {
    throw ValidationError(
        "train: semi+weak regularization needs the class-specific head");
  }
  const std::size_t n = data.size();
  const int fh = data.height() / model.backbone().downsample();
  const int fw = data.width() / model.backbone().downsample();

  auto params = model.named_params();
  std::vector<Tensor<S>> velocity;
  velocity.reserve(params.size());
  for (const auto& [name, p] : params) velocity.emplace_back(p->shape());

  if (metrics_csv) {
    *metrics_csv
        << "iteration,loss_cls,loss_reg,loss_total,accuracy,f_measure\n";
  }

  TrainStats stats;
  Tape<S> tape;
  for (int iter = 0; iter < cfg.iters; ++iter) {
    SplitMix64 rng = SplitMix64::stream(cfg.seed, rng_tag::kBatch,
                                        static_cast<std::uint64_t>(iter));
    struct Draw {
      std::size_t index;
      bool flip;
    };
    std::vector<Draw> batch;
    for (int j = 0; j < cfg.batch; ++j) {
      const std::size_t idx = static_cast<std::size_t>(rng.next_below(n));
      const bool flip = cfg.flip && rng.next_bool();
      batch.push_back({idx, flip});
    }

    // Total pair count across the batch, so the regularizer is a mean
    // over (image, boxed-class) pairs.
    int total_pairs = 0;
    const bool use_reg =
        regime == TrainRegime::kSemiWeak && cfg.lambda_weak > 0;
    if (use_reg) {
      for (const Draw& d : batch) {
        std::vector<bool> seen(static_cast<std::size_t>(data.classes()));
        for (const auto& [c, box] : data.record(d.index).boxes) {
          if (!seen[static_cast<std::size_t>(c)]) {
            seen[static_cast<std::size_t>(c)] = true;
            ++total_pairs;
          }
        }
      }
    }

    tape.clear();
    BoundModel<S> bound = model.bind(tape, true);
    Var<S> total;
    double loss_cls_sum = 0.0, loss_reg_sum = 0.0;
    for (int j = 0; j < cfg.batch; ++j) {
      const Draw& d = batch[j];
      Tensor<S> img = to_unit<S>(data.images[d.index]);
      std::vector<std::pair<int, BBox>> boxes = data.record(d.index).boxes;
      if (d.flip) {
        img = flip_horizontal(img);
        for (auto& [c, box] : boxes) box = flip_box(box, data.width());
      }

      std::optional<Tensor<S>> gt_alpha;
      if (regime == TrainRegime::kGwapGt) {
        if (boxes.empty()) {
          // No annotation to build the oracle map from; fall back to the
          // uniform map.
          gt_alpha = Tensor<S>({fh, fw},
                               S(1) / static_cast<S>(fh) / static_cast<S>(fw));
        } else {
          std::vector<BBox> plain;
          for (const auto& [c, box] : boxes) plain.push_back(box);
          gt_alpha =
              gt_weight_map<S>(plain, fh, fw, data.height(), data.width());
        }
      }

      const ModelOutput<S> out =
          model.forward(tape, bound, img, gt_alpha ? &*gt_alpha : nullptr);
      Var<S> l_cls =
          cfg.single_label
              ? softmax_ce_loss(out.logits, data.label_of(d.index))
              : sigmoid_ce_loss(out.logits,
                                data.template label_vector<S>(d.index));
      loss_cls_sum += static_cast<double>(l_cls.value()[0]);
      Var<S> l = mul_scalar(l_cls, S(1) / static_cast<S>(cfg.batch));

      if (use_reg && !boxes.empty()) {
        std::vector<std::vector<BBox>> class_boxes(
            static_cast<std::size_t>(data.classes()));
        for (const auto& [c, box] : boxes) {
          class_boxes[static_cast<std::size_t>(c)].push_back(box);
        }
        auto [hinges, pairs] = region_regularization_terms(
            *out.score_maps, class_boxes, static_cast<S>(cfg.margin),
            data.height(), data.width());
        if (pairs > 0) {
          loss_reg_sum += static_cast<double>(hinges.value()[0]);
          l = add(l, mul_scalar(hinges, static_cast<S>(cfg.lambda_weak) /
                                            static_cast<S>(total_pairs)));
        }
      }
      total = j ? add(total, l) : l;
    }

    const double loss_cls = loss_cls_sum / cfg.batch;
    const double loss_reg = total_pairs > 0 ? loss_reg_sum / total_pairs : 0.0;
    const double loss_total = static_cast<double>(total.value()[0]);
    if (!std::isfinite(loss_total)) {
      throw NumericError("train: loss diverged (non-finite) at iteration " +
                         std::to_string(iter));
    }

    tape.backward(total);
    const double decay_steps =
        cfg.lr_step > 0 ? static_cast<double>(iter / cfg.lr_step) : 0.0;
    const S lr_now =
        static_cast<S>(cfg.lr * std::pow(cfg.lr_factor, decay_steps));
    const std::vector<Var<S>> vars = bound_vars(bound);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      const Tensor<S> g = tape.grad(vars[pi]);
      sgd_step(*params[pi].second, g, velocity[pi], lr_now,
               static_cast<S>(cfg.momentum));
    }

    stats.final_loss = loss_total;
    stats.iterations = iter + 1;

    const bool last = iter + 1 == cfg.iters;
    const bool do_eval =
        cfg.eval_every > 0 && ((iter + 1) % cfg.eval_every == 0 || last);
    double acc = EvalReport::kUnset, fm = EvalReport::kUnset;
    if (do_eval) {
      acc = detail::train_accuracy(model, data, cfg.single_label, 200);
      fm = detail::train_f_measure(model, data, 25);
      stats.final_accuracy = acc;
      if (checkpoint_cb) checkpoint_cb(iter + 1, model);
    }
    if (metrics_csv &&
        ((iter + 1) % std::max(1, cfg.log_every) == 0 || last || do_eval)) {
      *metrics_csv << iter + 1 << "," << detail::csv_cell(loss_cls) << ","
                   << detail::csv_cell(loss_reg) << ","
                   << detail::csv_cell(loss_total) << ","
                   << detail::csv_cell(acc) << "," << detail::csv_cell(fm)
                   << "\n";
    }
  }
  return stats;
}

}  // namespace gwap
