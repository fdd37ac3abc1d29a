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

// Binary PPM (P6) and PGM (P5) readers and writers. Images are 8-bit with
// maxval 255, stored planar: RGB images as 3xHxW tensors, gray images as
// HxW. Writers emit a fixed header so identical pixels give identical files.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "gwap/tensor.hpp"

namespace gwap {

Tensor<std::uint8_t> read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor<std::uint8_t>& rgb);

Tensor<std::uint8_t> read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor<std::uint8_t>& gray);

/// PGM with values > 127 mapped to 1.
Mask read_mask(const std::string& path);
/// Mask cells mapped to 0 or 255.
void write_mask(const std::string& path, const Mask& mask);

/// Gray levels round(255 * v) for a map already scaled to [0, 1]; values are
/// clamped so boundary rounding cannot leave the byte range.
template <typename S>
void write_heatmap_pgm(const std::string& path, const Tensor<S>& map) {
  if (map.rank() != 2) {
    throw ShapeError("heatmap must be HxW, got " + map.shape_string());
  }
  Tensor<std::uint8_t> gray(map.shape());
  for (typename Tensor<S>::Index i = 0; i < map.size(); ++i) {
    const double v = std::lround(255.0 * static_cast<double>(map[i]));
    gray[i] = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
  }
  write_pgm(path, gray);
}

/// Bytes to unit floats, v / 255.
template <typename S>
Tensor<S> to_unit(const Tensor<std::uint8_t>& img) {
  Tensor<S> out(img.shape());
  for (typename Tensor<S>::Index i = 0; i < img.size(); ++i) {
    out[i] = static_cast<S>(img[i]) / S(255);
  }
  return out;
}

/// Unit floats to bytes, round(255 * v) clamped to [0, 255].
template <typename S>
Tensor<std::uint8_t> quantize_unit(const Tensor<S>& img) {
  Tensor<std::uint8_t> out(img.shape());
  for (typename Tensor<S>::Index i = 0; i < img.size(); ++i) {
    const double v = std::lround(255.0 * static_cast<double>(img[i]));
    out[i] = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
  }
  return out;
}

}  // namespace gwap
