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

// In-memory dataset view: images preloaded as 8-bit tensors, annotations
// from the manifest, masks read from disk on demand.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gwap/bbox.hpp"
#include "gwap/error.hpp"
#include "gwap/image_io.hpp"
#include "gwap/synth.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Tensor<std::uint8_t>> images;  // 3xHxW each

  static LoadedDataset load(const DatasetManifest& m) {
    if (m.samples.empty()) {
      throw ValidationError("dataset: manifest has no samples");
    }
    LoadedDataset d;
    d.manifest = m;
    d.images.reserve(m.samples.size());
    for (const SampleRecord& r : m.samples) {
      Tensor<std::uint8_t> img = read_ppm(image_path(m, r));
      if (img.extent(1) != m.height || img.extent(2) != m.width) {
        throw IoError(image_path(m, r) + ": image is " + img.shape_string() +
                      ", manifest says " + std::to_string(m.height) + "x" +
                      std::to_string(m.width));
      }
      d.images.push_back(std::move(img));
    }
    return d;
  }

  std::size_t size() const { return images.size(); }
  int classes() const { return manifest.classes(); }
  int height() const { return manifest.height; }
  int width() const { return manifest.width; }
  const SampleRecord& record(std::size_t i) const {
    return manifest.samples[i];
  }

  bool single_label() const {
    for (const SampleRecord& r : manifest.samples) {
      std::uint32_t m = r.label_mask;
      int bits = 0;
      while (m) {
        bits += static_cast<int>(m & 1u);
        m >>= 1;
      }
      if (bits != 1) return false;
    }
    return true;
  }

  template <typename S>
  Tensor<S> label_vector(std::size_t i) const {
    Tensor<S> y({classes()}, S(0));
    for (int c = 0; c < classes(); ++c) {
      if (record(i).has_label(c)) y[c] = S(1);
    }
    return y;
  }

  /// Ground-truth class of a single-label sample.
  int label_of(std::size_t i) const {
    const std::uint32_t m = record(i).label_mask;
    for (int c = 0; c < classes(); ++c) {
      if (m == (1u << c)) return c;
    }
    throw ValidationError("dataset: sample " + std::to_string(i) +
                          " is not single-label");
  }

  std::vector<BBox> boxes_of(std::size_t i, int cls) const {
    std::vector<BBox> out;
    for (const auto& [c, box] : record(i).boxes) {
      if (c == cls) out.push_back(box);
    }
    return out;
  }

  std::vector<BBox> all_boxes(std::size_t i) const {
    std::vector<BBox> out;
    for (const auto& [c, box] : record(i).boxes) out.push_back(box);
    return out;
  }

  /// Class mask from disk; empty tensor when the file does not exist.
  Mask load_class_mask(std::size_t i, int cls) const {
    const std::string path = mask_path(manifest, record(i), cls);
    if (!std::filesystem::exists(path)) return Mask();
    Mask m = read_mask(path);
    if (m.extent(0) != height() || m.extent(1) != width()) {
      throw IoError(path + ": mask is " + m.shape_string() +
                    ", manifest says " + std::to_string(height()) + "x" +
                    std::to_string(width()));
    }
    return m;
  }

  /// Union of every labeled class's mask; empty when none exist on disk.
  Mask load_union_mask(std::size_t i) const {
    Mask u;
    for (int c = 0; c < classes(); ++c) {
      if (!record(i).has_label(c)) continue;
      const Mask m = load_class_mask(i, c);
      if (m.empty()) continue;
      if (u.empty()) {
        u = m;
      } else {
        for (Mask::Index j = 0; j < u.size(); ++j) {
          u[j] = (u[j] || m[j]) ? 1 : 0;
        }
      }
    }
    return u;
  }
};

/// Horizontal flip of a planar CxHxW tensor.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
  if (img.rank() != 3) {
    throw ShapeError("flip_horizontal: need CxHxW, got " + img.shape_string());
  }
  Tensor<T> out(img.shape());
  const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out[(static_cast<typename Tensor<T>::Index>(ch) * h + y) * w + x] =
            img[(static_cast<typename Tensor<T>::Index>(ch) * h + y) * w +
                (w - 1 - x)];
      }
    }
  }
  return out;
}

inline BBox flip_box(const BBox& b, int width) {
  return BBox{width - 1 - b.x1, b.y0, width - 1 - b.x0, b.y1};
}

}  // namespace gwap
