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

// Finite-difference coverage, shared between the unit tests (few seeds) and
// the acceptance gate (many seeds). Every differentiable primitive has a
// case here; the head cases push gradients through complete models.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gwap/model.hpp"
#include "gwap/ops.hpp"
#include "gwap/pooling.hpp"
#include "gwap/rng.hpp"
#include "test_util.hpp"

namespace fdcases {

using gwap::SplitMix64;
using gwap::Tape;
using gwap::Tensor;
using gwap::Var;

/// One named gradient check; run(seed) returns the worst guarded relative
/// error over every input element for that seed.
struct FdCase {
  std::string name;
  std::function<double(std::uint64_t)> run;
};

namespace detail {

constexpr std::uint64_t kFdTag = 0x464443ull;  // decorrelates FD draws

inline SplitMix64 case_stream(std::uint64_t seed, std::uint64_t salt) {
  return SplitMix64::stream(seed ^ salt * 0x9E3779B97F4A7C15ull, kFdTag);
}

/// Wraps a graph builder whose output may be any shape: the output is
/// contracted with fixed signed weights so every element influences the
/// scalar under test.
template <typename Build>
std::function<double(std::uint64_t)> probed(
    std::vector<std::vector<int>> input_shapes, std::vector<int> out_shape,
    double lo, double hi, Build build, std::uint64_t salt) {
  return [=](std::uint64_t seed) {
    SplitMix64 g = case_stream(seed, salt);
    std::vector<Tensor<double>> inputs;
    inputs.reserve(input_shapes.size());
    for (const std::vector<int>& s : input_shapes) {
      inputs.push_back(testutil::rand_tensor(s, g, lo, hi));
    }
    const Tensor<double> pw = testutil::probe_weights(out_shape, g);
    return testutil::max_fd_error(
        inputs, [&build, &pw](Tape<double>& t,
                              const std::vector<Var<double>>& leaves) {
          return gwap::fixed_weighted_sum(build(t, leaves), pw);
        });
  };
}

/// Same, for builders that already produce a scalar.
template <typename Build>
std::function<double(std::uint64_t)> scalar_case(
    std::vector<std::vector<int>> input_shapes, double lo, double hi,
    Build build, std::uint64_t salt) {
  return [=](std::uint64_t seed) {
    SplitMix64 g = case_stream(seed, salt);
    std::vector<Tensor<double>> inputs;
    inputs.reserve(input_shapes.size());
    for (const std::vector<int>& s : input_shapes) {
      inputs.push_back(testutil::rand_tensor(s, g, lo, hi));
    }
    return testutil::max_fd_error(inputs, build);
  };
}

}  // namespace detail

/// All differentiable primitives. Input ranges avoid the genuine kinks
/// (relu at 0, division near 0); everything else is checked on generic
/// positions.
inline std::vector<FdCase> primitive_cases() {
  using detail::probed;
  using detail::scalar_case;
  using L = const std::vector<Var<double>>&;
  std::vector<FdCase> cases;
  std::uint64_t salt = 1;
  const auto add_case = [&cases, &salt](std::string name,
                                        std::function<double(std::uint64_t)> r) {
    cases.push_back({std::move(name), std::move(r)});
    ++salt;
  };

  add_case("add", probed({{2, 3, 4}, {2, 3, 4}}, {2, 3, 4}, -1.5, 1.5,
                         [](Tape<double>&, L v) { return add(v[0], v[1]); },
                         salt));
  add_case("sub", probed({{2, 3, 4}, {2, 3, 4}}, {2, 3, 4}, -1.5, 1.5,
                         [](Tape<double>&, L v) { return sub(v[0], v[1]); },
                         salt));
  add_case("mul", probed({{2, 3, 4}, {2, 3, 4}}, {2, 3, 4}, -1.5, 1.5,
                         [](Tape<double>&, L v) { return mul(v[0], v[1]); },
                         salt));
  add_case("div", probed({{3, 4}, {3, 4}}, {3, 4}, 0.4, 1.6,
                         [](Tape<double>&, L v) { return gwap::div(v[0], v[1]); },
                         salt));
  add_case("add_scalar",
           probed({{2, 5}}, {2, 5}, -1.5, 1.5,
                  [](Tape<double>&, L v) { return add_scalar(v[0], 0.7); },
                  salt));
  add_case("mul_scalar",
           probed({{2, 5}}, {2, 5}, -1.5, 1.5,
                  [](Tape<double>&, L v) { return mul_scalar(v[0], -1.3); },
                  salt));
  add_case("exp", probed({{2, 3, 4}}, {2, 3, 4}, -1.5, 1.5,
                         [](Tape<double>&, L v) { return exp(v[0]); }, salt));
  add_case("sigmoid",
           probed({{2, 3, 4}}, {2, 3, 4}, -3.0, 3.0,
                  [](Tape<double>&, L v) { return sigmoid(v[0]); }, salt));
  add_case("relu", [salt](std::uint64_t seed) {
    // signed inputs bounded away from the kink at zero
    SplitMix64 g = detail::case_stream(seed, salt);
    Tensor<double> x({2, 3, 4});
    for (Tensor<double>::Index i = 0; i < x.size(); ++i) {
      x[i] = (g.next_bool() ? 1.0 : -1.0) * g.next_range(0.1, 1.5);
    }
    const Tensor<double> pw = testutil::probe_weights({2, 3, 4}, g);
    return testutil::max_fd_error({x}, [&pw](Tape<double>&, L v) {
      return fixed_weighted_sum(relu(v[0]), pw);
    });
  });
  ++salt;
  add_case("reshape",
           probed({{2, 3, 4}}, {4, 6}, -1.5, 1.5,
                  [](Tape<double>&, L v) { return reshape(v[0], {4, 6}); },
                  salt));
  add_case("slice_channels",
           probed({{4, 3, 2}}, {2, 3, 2}, -1.5, 1.5,
                  [](Tape<double>&, L v) {
                    return slice_channels(v[0], 1, 3);
                  },
                  salt));
  add_case("sum", scalar_case({{3, 4}}, -1.5, 1.5,
                              [](Tape<double>&, L v) { return sum(v[0]); },
                              salt));
  add_case("fixed_weighted_sum", [salt](std::uint64_t seed) {
    SplitMix64 g = detail::case_stream(seed, salt);
    const Tensor<double> x = testutil::rand_tensor({3, 4}, g, -1.5, 1.5);
    const Tensor<double> w = testutil::probe_weights({3, 4}, g);
    return testutil::max_fd_error({x}, [&w](Tape<double>&, L v) {
      return fixed_weighted_sum(v[0], w);
    });
  });
  ++salt;
  add_case("matmul",
           probed({{3, 4}, {4, 2}}, {3, 2}, -1.5, 1.5,
                  [](Tape<double>&, L v) { return matmul(v[0], v[1]); },
                  salt));
  add_case("add_channel_bias",
           probed({{3, 4, 5}, {3}}, {3, 4, 5}, -1.5, 1.5,
                  [](Tape<double>&, L v) {
                    return add_channel_bias(v[0], v[1]);
                  },
                  salt));
  add_case("channel_linear",
           probed({{4, 3, 2}, {2, 4}}, {2, 3, 2}, -1.5, 1.5,
                  [](Tape<double>&, L v) {
                    return channel_linear(v[0], v[1]);
                  },
                  salt));
  add_case("channel_linear_bias",
           probed({{4, 3, 2}, {2, 4}, {2}}, {2, 3, 2}, -1.5, 1.5,
                  [](Tape<double>&, L v) {
                    return channel_linear(v[0], v[1], v[2]);
                  },
                  salt));
  add_case("spatial_softmax",
           probed({{2, 3, 4}}, {2, 3, 4}, -2.0, 2.0,
                  [](Tape<double>&, L v) { return spatial_softmax(v[0]); },
                  salt));
  add_case("channel_softmax",
           probed({{4, 2, 3}}, {4, 2, 3}, -2.0, 2.0,
                  [](Tape<double>&, L v) { return channel_softmax(v[0]); },
                  salt));
  add_case("channel_softmax_restricted",
           probed({{4, 2, 3}}, {4, 2, 3}, -2.0, 2.0,
                  [](Tape<double>&, L v) {
                    return channel_softmax(v[0], 3);
                  },
                  salt));
  add_case("normalize_by_sum",
           probed({{1, 3, 4}}, {1, 3, 4}, 0.2, 1.8,
                  [](Tape<double>&, L v) { return normalize_by_sum(v[0]); },
                  salt));
  add_case("conv2d_s1p1",
           probed({{2, 5, 6}, {3, 2, 3, 3}, {3}}, {3, 5, 6}, -1.0, 1.0,
                  [](Tape<double>&, L v) {
                    return conv2d(v[0], v[1], v[2], 1, 1);
                  },
                  salt));
  add_case("conv2d_s2p0",
           probed({{2, 7, 7}, {3, 2, 3, 3}, {3}}, {3, 3, 3}, -1.0, 1.0,
                  [](Tape<double>&, L v) {
                    return conv2d(v[0], v[1], v[2], 2, 0);
                  },
                  salt));
  add_case("conv2d_s2p1",
           probed({{3, 6, 6}, {4, 3, 3, 3}, {4}}, {4, 3, 3}, -1.0, 1.0,
                  [](Tape<double>&, L v) {
                    return conv2d(v[0], v[1], v[2], 2, 1);
                  },
                  salt));
  add_case("gap", probed({{3, 4, 5}}, {3}, -1.5, 1.5,
                         [](Tape<double>&, L v) { return gap(v[0]); }, salt));
  add_case("gmp", [salt](std::uint64_t seed) {
    // raise each channel's max so the argmax cannot flip within the FD step
    SplitMix64 g = detail::case_stream(seed, salt);
    Tensor<double> x = testutil::rand_tensor({3, 4, 5}, g, -1.5, 1.5);
    for (int c = 0; c < 3; ++c) {
      Tensor<double>::Index best = 0;
      for (Tensor<double>::Index i = 0; i < 20; ++i) {
        if (x[c * 20 + i] > x[c * 20 + best]) best = i;
      }
      x[c * 20 + best] += 0.1;
    }
    const Tensor<double> pw = testutil::probe_weights({3}, g);
    return testutil::max_fd_error({x}, [&pw](Tape<double>&, L v) {
      return fixed_weighted_sum(gmp(v[0]), pw);
    });
  });
  ++salt;
  add_case("lse_pool_r0.5",
           probed({{3, 4, 5}}, {3}, -1.5, 1.5,
                  [](Tape<double>&, L v) { return lse_pool(v[0], 0.5); },
                  salt));
  add_case("lse_pool_r2",
           probed({{3, 4, 5}}, {3}, -1.5, 1.5,
                  [](Tape<double>&, L v) { return lse_pool(v[0], 2.0); },
                  salt));
  add_case("gwap_scores",
           probed({{3, 2, 4}, {2, 4}}, {3}, -1.5, 1.5,
                  [](Tape<double>&, L v) {
                    return gwap_scores(v[0], v[1]);
                  },
                  salt));
  add_case("gwap_per_class",
           probed({{3, 2, 4}, {3, 2, 4}}, {3}, -1.5, 1.5,
                  [](Tape<double>&, L v) {
                    return gwap_per_class(v[0], v[1]);
                  },
                  salt));
  for (const gwap::AgnosticVariant variant :
       {gwap::AgnosticVariant::kFull, gwap::AgnosticVariant::kNoSigmoid,
        gwap::AgnosticVariant::kNoExp, gwap::AgnosticVariant::kSam}) {
    add_case(std::string("class_agnostic_weights_") + to_string(variant),
             probed({{4, 3, 2}, {1, 4}, {1}}, {3, 2}, -1.5, 1.5,
                    [variant](Tape<double>&, L v) {
                      return class_agnostic_weights(v[0], v[1], v[2],
                                                    variant);
                    },
                    salt));
  }
  for (const bool bg : {true, false}) {
    add_case(std::string("class_specific_scores_bg_") +
                 (bg ? "true" : "false"),
             probed({{4, 2, 3}, {4, 4}, {4}}, {3}, -1.5, 1.5,
                    [bg](Tape<double>&, L v) {
                      return class_specific_head(v[0], v[1], v[2], 3, bg)
                          .scores;
                    },
                    salt));
    add_case(std::string("class_specific_alphas_bg_") +
                 (bg ? "true" : "false"),
             probed({{4, 2, 3}, {4, 4}, {4}}, {3, 2, 3}, -1.5, 1.5,
                    [bg](Tape<double>&, L v) {
                      return class_specific_head(v[0], v[1], v[2], 3, bg)
                          .alphas;
                    },
                    salt));
  }
  add_case("sigmoid_ce_loss", [salt](std::uint64_t seed) {
    SplitMix64 g = detail::case_stream(seed, salt);
    const Tensor<double> z = testutil::rand_tensor({5}, g, -2.0, 2.0);
    Tensor<double> y({5});
    for (int i = 0; i < 5; ++i) y[i] = g.next_bool() ? 1.0 : 0.0;
    return testutil::max_fd_error({z}, [&y](Tape<double>&, L v) {
      return sigmoid_ce_loss(v[0], y);
    });
  });
  ++salt;
  add_case("softmax_ce_loss", [salt](std::uint64_t seed) {
    SplitMix64 g = detail::case_stream(seed, salt);
    const Tensor<double> z = testutil::rand_tensor({5}, g, -2.0, 2.0);
    const int label = static_cast<int>(g.next_below(5));
    return testutil::max_fd_error({z}, [label](Tape<double>&, L v) {
      return softmax_ce_loss(v[0], label);
    });
  });
  ++salt;
  return cases;
}

namespace detail {

inline double eval_model_loss(const gwap::Model<double>& m,
                              const Tensor<double>& img,
                              const Tensor<double>& labels) {
  Tape<double> t;
  t.set_recording(false);
  const gwap::ModelOutput<double> out = m.infer(t, img);
  return gwap::sigmoid_ce_loss(out.logits, labels).value()[0];
}

}  // namespace detail

/// Gradient check of a complete model per head: analytic gradients of the
/// classification loss against central differences, over `per_tensor`
/// randomly chosen elements of every parameter tensor (all elements when a
/// tensor is smaller than that).
inline std::vector<FdCase> head_cases(int per_tensor) {
  std::vector<FdCase> cases;
  const gwap::HeadKind heads[] = {
      gwap::HeadKind::kGap,           gwap::HeadKind::kGmp,
      gwap::HeadKind::kLse,           gwap::HeadKind::kSam,
      gwap::HeadKind::kGwapAgnostic,  gwap::HeadKind::kGwapNoSigmoid,
      gwap::HeadKind::kGwapNoExp,     gwap::HeadKind::kGwapSpecific};
  for (const gwap::HeadKind head : heads) {
    cases.push_back({std::string("head_") + to_string(head),
                     [head, per_tensor](std::uint64_t seed) {
      gwap::BackboneConfig bc;
      bc.layers = {{6, 3, 2, 1}, {8, 3, 1, 1}};
      const int classes = 3;
      gwap::Model<double> model(bc, head, classes, seed, 2.0);
      SplitMix64 g = detail::case_stream(seed, 0x48454144ull);
      const Tensor<double> img = testutil::rand_tensor({3, 8, 8}, g, 0.0, 1.0);
      Tensor<double> labels({classes});
      for (int c = 0; c < classes; ++c) labels[c] = g.next_bool() ? 1.0 : 0.0;
      labels[static_cast<int>(g.next_below(classes))] = 1.0;

      Tape<double> tape;
      const gwap::BoundModel<double> bound = model.bind(tape, true);
      const gwap::ModelOutput<double> out = model.forward(tape, bound, img);
      tape.backward(gwap::sigmoid_ce_loss(out.logits, labels));
      const std::vector<Var<double>> vars = gwap::bound_vars(bound);

      gwap::Model<double> probe = model;
      auto probe_params = probe.named_params();
      double worst = 0.0;
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor<double> ga = tape.grad(vars[i]);
        Tensor<double>& pt = *probe_params[i].second;
        const auto size = pt.size();
        const bool exhaustive = size <= static_cast<decltype(size)>(per_tensor);
        for (int s = 0; s < per_tensor; ++s) {
          if (exhaustive && static_cast<decltype(size)>(s) >= size) break;
          const auto j = static_cast<Tensor<double>::Index>(
              exhaustive ? s
                         : static_cast<int>(g.next_below(
                               static_cast<std::uint64_t>(size))));
          const double x0 = pt[j];
          const double h = 5e-6 * std::max(1.0, std::abs(x0));
          pt[j] = x0 + h;
          const double fp = detail::eval_model_loss(probe, img, labels);
          pt[j] = x0 - h;
          const double fm = detail::eval_model_loss(probe, img, labels);
          pt[j] = x0;
          worst = std::max(worst,
                           testutil::rel_err((fp - fm) / (2.0 * h), ga[j]));
        }
      }
      return worst;
    }});
  }
  return cases;
}

}  // namespace fdcases
