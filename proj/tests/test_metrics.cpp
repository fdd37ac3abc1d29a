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

// Evaluation metrics against hand-worked fixtures and a brute-force AP
// reference.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "gwap/metrics.hpp"
#include "gwap/rng.hpp"
#include "oracles.hpp"

using gwap::ApMode;
using gwap::BBox;
using gwap::LocRecord;
using gwap::Mask;
using gwap::SplitMix64;

TEST_CASE("mask_counts tallies intersection and marginals") {
  Mask m({2, 3}, 0);
  Mask g({2, 3}, 0);
  m.at(0, 0) = 1;
  m.at(0, 1) = 1;
  g.at(0, 1) = 1;
  g.at(1, 2) = 1;
  const gwap::MaskCounts c = gwap::mask_counts(m, g);
  CHECK(c.intersection == 1);
  CHECK(c.mask == 2);
  CHECK(c.gt == 2);
  CHECK_THROWS_AS(gwap::mask_counts(m, Mask({3, 2}, 0)), gwap::ShapeError);
}

TEST_CASE("f_measure follows the weighted formula and its edge rules") {
  // P = 1/2, R = 1: F = 1.3 * 0.5 / (0.3 * 0.5 + 1) = 0.65 / 1.15.
  const gwap::FMeasure fm = gwap::f_measure({1, 2, 1});
  CHECK(fm.precision == doctest::Approx(0.5));
  CHECK(fm.recall == doctest::Approx(1.0));
  CHECK(fm.f == doctest::Approx(0.65 / 1.15).epsilon(1e-12));

  // beta2 = 1 is the harmonic mean.
  const gwap::FMeasure f1 = gwap::f_measure({1, 2, 1}, 1.0);
  CHECK(f1.f == doctest::Approx(2.0 * 0.5 * 1.0 / 1.5).epsilon(1e-12));

  // An empty prediction has zero precision by convention, and F collapses
  // to 0 when both P and R vanish.
  const gwap::FMeasure empty_pred = gwap::f_measure({0, 0, 4});
  CHECK(empty_pred.precision == 0.0);
  CHECK(empty_pred.recall == 0.0);
  CHECK(empty_pred.f == 0.0);

  CHECK_THROWS_AS(gwap::f_measure({0, 3, 0}), gwap::ValidationError);

  // The mask-level overload matches the counts-level one.
  Mask m({1, 4}, 0);
  Mask g({1, 4}, 0);
  m[0] = 1;
  m[1] = 1;
  g[1] = 1;
  const gwap::FMeasure via_masks = gwap::f_measure(m, g);
  CHECK(via_masks.f == doctest::Approx(0.65 / 1.15).epsilon(1e-12));
}

TEST_CASE("iou uses inclusive pixel areas") {
  // Two 2x2 boxes overlapping in one pixel: 1 / (4 + 4 - 1).
  CHECK(gwap::iou(BBox{0, 0, 1, 1}, BBox{1, 1, 2, 2}) ==
        doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(gwap::iou(BBox{0, 0, 1, 1}, BBox{5, 5, 6, 6}) == 0.0);
  CHECK(gwap::iou(BBox{2, 3, 4, 5}, BBox{2, 3, 4, 5}) == 1.0);
  CHECK_THROWS_AS(gwap::iou(BBox{3, 0, 1, 0}, BBox{0, 0, 1, 1}),
                  gwap::ValidationError);
}

TEST_CASE("top1_loc_error demands class and box to both be right") {
  std::vector<LocRecord> recs(4);
  // Correct class, box IoU 1 with the second gt box: counted correct.
  recs[0] = {0, {BBox{0, 0, 1, 1}, BBox{4, 4, 7, 7}}, 0, true, BBox{4, 4, 7, 7}};
  // Correct class, box far away: localization failure.
  recs[1] = {1, {BBox{0, 0, 3, 3}}, 1, true, BBox{10, 10, 13, 13}};
  // Wrong class despite a perfect box: classification failure.
  recs[2] = {0, {BBox{0, 0, 3, 3}}, 2, true, BBox{0, 0, 3, 3}};
  // Correct class but extraction found nothing.
  recs[3] = {2, {BBox{0, 0, 3, 3}}, 2, false, BBox{}};
  CHECK(gwap::top1_loc_error(recs) == doctest::Approx(0.75));

  // IoU exactly at the threshold counts as localized.
  std::vector<LocRecord> edge(1);
  edge[0] = {0, {BBox{0, 0, 1, 1}}, 0, true, BBox{1, 1, 2, 2}};
  CHECK(gwap::top1_loc_error(edge, 1.0 / 7.0) == 0.0);
  CHECK(gwap::top1_loc_error(edge, 0.5) == 1.0);

  CHECK_THROWS_AS(gwap::top1_loc_error({}), gwap::ValidationError);
  std::vector<LocRecord> no_gt(1);
  no_gt[0] = {0, {}, 0, true, BBox{0, 0, 1, 1}};
  CHECK_THROWS_AS(gwap::top1_loc_error(no_gt), gwap::ValidationError);
}

TEST_CASE("topk_cls_error ranks ties by lower class index") {
  const std::vector<std::vector<double>> scores = {
      {0.5, 0.5, 0.1},  // tie: rank order 0, 1, 2
      {0.1, 0.2, 0.9},
      {0.9, 0.2, 0.1},
  };
  const std::vector<int> gt = {1, 2, 1};
  // Top-1: predictions are 0, 2, 0 -> errors on examples 0 and 2.
  CHECK(gwap::topk_cls_error(scores, gt, 1) == doctest::Approx(2.0 / 3.0));
  // Top-2: {0,1}, {2,1}, {0,1} -> only hits.
  CHECK(gwap::topk_cls_error(scores, gt, 2) == 0.0);
  CHECK(gwap::topk_cls_error(scores, gt, 3) == 0.0);

  CHECK_THROWS_AS(gwap::topk_cls_error(scores, gt, 0), gwap::ValidationError);
  CHECK_THROWS_AS(gwap::topk_cls_error(scores, gt, 4), gwap::ValidationError);
  CHECK_THROWS_AS(gwap::topk_cls_error(scores, {1, 2}, 1),
                  gwap::ValidationError);
  CHECK_THROWS_AS(gwap::topk_cls_error({{0.1, 0.2}, {0.3}}, {0, 0}, 1),
                  gwap::ValidationError);
  CHECK_THROWS_AS(gwap::topk_cls_error(scores, {1, 2, 3}, 1),
                  gwap::ValidationError);
}

TEST_CASE("average_precision hand fixtures") {
  // Perfect ranking: both conventions give 1.
  CHECK(gwap::average_precision({0.9, 0.8, 0.1}, {1, 1, 0},
                                ApMode::kAllPoints) == doctest::Approx(1.0));
  CHECK(gwap::average_precision({0.9, 0.8, 0.1}, {1, 1, 0},
                                ApMode::kVoc07_11pt) == doctest::Approx(1.0));

  // Single positive ranked last of four: precision 1/4 when recall jumps.
  CHECK(gwap::average_precision({0.9, 0.8, 0.7, 0.6}, {0, 0, 0, 1},
                                ApMode::kAllPoints) == doctest::Approx(0.25));
  CHECK(gwap::average_precision({0.9, 0.8, 0.7, 0.6}, {0, 0, 0, 1},
                                ApMode::kVoc07_11pt) == doctest::Approx(0.25));

  // Alternating hits: the two conventions genuinely differ.
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  const std::vector<std::uint8_t> l = {1, 0, 1, 0};
  // Envelope: [1, 2/3, 2/3, 1/2]; recall steps 0.5 at rank 1, 1.0 at rank 3.
  CHECK(gwap::average_precision(s, l, ApMode::kAllPoints) ==
        doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));
  // Eleven-point: recall thresholds up to 0.5 see precision 1, the rest 2/3.
  CHECK(gwap::average_precision(s, l, ApMode::kVoc07_11pt) ==
        doctest::Approx((6.0 * 1.0 + 5.0 * (2.0 / 3.0)) / 11.0).epsilon(1e-12));

  // Tied scores rank the lower index first, which this fixture detects:
  // with the positive at index 0 the tie resolves favorably.
  CHECK(gwap::average_precision({0.5, 0.5}, {1, 0}, ApMode::kAllPoints) ==
        doctest::Approx(1.0));
  CHECK(gwap::average_precision({0.5, 0.5}, {0, 1}, ApMode::kAllPoints) ==
        doctest::Approx(0.5));

  CHECK_THROWS_AS(gwap::average_precision({0.5, 0.4}, {0, 0},
                                          ApMode::kAllPoints),
                  gwap::ValidationError);
  CHECK_THROWS_AS(gwap::average_precision({0.5}, {1, 0}, ApMode::kAllPoints),
                  gwap::ValidationError);
  CHECK_THROWS_AS(gwap::average_precision({}, {}, ApMode::kVoc07_11pt),
                  gwap::ValidationError);
}

TEST_CASE("average_precision agrees with the brute-force reference") {
  SplitMix64 g(61);
  for (int n = 0; n < 300; ++n) {
    const std::size_t count = 1 + g.next_below(40);
    std::vector<double> scores(count);
    std::vector<std::uint8_t> labels(count);
    bool any = false;
    for (std::size_t i = 0; i < count; ++i) {
      // Scores from a coarse grid so ties are common.
      scores[i] = static_cast<double>(g.next_below(8)) / 8.0;
      labels[i] = g.next_unit() < 0.4 ? 1 : 0;
      any = any || labels[i];
    }
    if (!any) labels[g.next_below(count)] = 1;
    CAPTURE(n);
    CHECK(gwap::average_precision(scores, labels, ApMode::kVoc07_11pt) ==
          doctest::Approx(oracles::ap_reference(scores, labels, true))
              .epsilon(1e-9));
    CHECK(gwap::average_precision(scores, labels, ApMode::kAllPoints) ==
          doctest::Approx(oracles::ap_reference(scores, labels, false))
              .epsilon(1e-9));
  }
}

TEST_CASE("mean_average_precision averages per-class AP") {
  const std::vector<std::vector<double>> scores = {
      {0.9, 0.8, 0.1},
      {0.9, 0.8, 0.7, 0.6},
  };
  const std::vector<std::vector<std::uint8_t>> labels = {
      {1, 1, 0},
      {1, 0, 1, 0},
  };
  const double ap0 =
      gwap::average_precision(scores[0], labels[0], ApMode::kAllPoints);
  const double ap1 =
      gwap::average_precision(scores[1], labels[1], ApMode::kAllPoints);
  CHECK(gwap::mean_average_precision(scores, labels, ApMode::kAllPoints) ==
        doctest::Approx(0.5 * (ap0 + ap1)).epsilon(1e-12));

  CHECK_THROWS_AS(gwap::mean_average_precision({}, {}, ApMode::kAllPoints),
                  gwap::ValidationError);
  CHECK_THROWS_AS(
      gwap::mean_average_precision(scores, {labels[0]}, ApMode::kAllPoints),
      gwap::ValidationError);
  // A class with no positive labels is an error at this level; callers
  // restrict to represented classes first.
  CHECK_THROWS_AS(gwap::mean_average_precision({{0.5}}, {{0}},
                                               ApMode::kAllPoints),
                  gwap::ValidationError);
}
