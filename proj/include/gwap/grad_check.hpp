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

// Central-difference oracle for reverse-mode gradients. Always runs in
// double: the step below pushes single precision past its useful range.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gwap/tape.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

/// Builds a scalar loss on the tape from the registered input leaves.
using GradCheckFn =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_input = -1;
  std::int64_t worst_element = -1;
};

/// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares the tape gradient of f against central differences,
/// (f(x+h) - f(x-h)) / 2h, element by element over every input.
inline GradCheckReport grad_check(const GradCheckFn& f,
                                  std::vector<Tensor<double>> inputs,
                                  double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) {
    vars.push_back(tape.leaf(in, /*requires_grad=*/true));
  }
  Var<double> loss = f(tape, vars);
  if (loss.value().size() != 1) {
    throw ShapeError("grad_check: loss must be scalar, got " +
                     loss.value().shape_string());
  }
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) grads.push_back(tape.grad(v));

  auto eval = [&f](const std::vector<Tensor<double>>& xs) {
    Tape<double> t;
    t.set_recording(false);
    std::vector<Var<double>> vs;
    vs.reserve(xs.size());
    for (const auto& x : xs) vs.push_back(t.leaf(x));
    return f(t, vs).value()[0];
  };

  GradCheckReport rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t e = 0; e < inputs[i].size(); ++e) {
      const double x0 = inputs[i][e];
      inputs[i][e] = x0 + h;
      const double fp = eval(inputs);
      inputs[i][e] = x0 - h;
      const double fm = eval(inputs);
      inputs[i][e] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = grad_rel_err(grads[i][e], numeric);
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_input = static_cast<int>(i);
        rep.worst_element = e;
      }
    }
  }
  return rep;
}

}  // namespace gwap
