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

// Deterministic synthetic dataset: textured shapes on value-matched noise.
// Shapes carry class-consistent stripe or checker textures with the same
// mean intensity as the background, so localization has to key on
// structure, not brightness. Every random decision flows from the dataset
// seed through per-image substreams, making generation order-independent
// and bit-reproducible.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gwap/bbox.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

struct SynthSpec {
  int size = 64;           // square images, must be divisible by 4
  int count = 1000;        // number of images
  std::uint64_t seed = 7;
  int min_objects = 1;
  int max_objects = 3;
  double noise_amp = 0.28;    // background noise amplitude around 0.5
  double texture_amp = 0.32;  // texture amplitude around 0.5
  double texture_period = 4.0;
  bool distractors = false;  // unlabeled shapes with an off-class texture
  std::vector<std::string> class_names = {"circle", "square", "triangle",
                                          "cross"};
};

struct SampleRecord {
  std::string path;  // image path relative to the manifest directory
  std::uint32_t label_mask = 0;
  std::vector<std::pair<int, BBox>> boxes;  // (class, box) pairs

  bool has_label(int c) const { return (label_mask >> c) & 1u; }
};

struct DatasetManifest {
  int version = 1;
  int height = 0;
  int width = 0;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  std::string dir;  // directory the manifest lives in; resolves paths
  std::vector<SampleRecord> samples;

  int classes() const { return static_cast<int>(class_names.size()); }
};

/// Generates images, per-class masks, and the manifest under out_dir
/// (subdirectories images/ and masks/). Returns the in-memory manifest.
DatasetManifest generate_dataset(const SynthSpec& spec,
                                 const std::string& out_dir);

/// One image rendered in memory, with its annotation. Exposed for tests
/// and for generate_dataset itself.
struct RenderedSample {
  Tensor<std::uint8_t> image;        // 3xHxW
  std::uint32_t label_mask = 0;
  std::vector<std::pair<int, BBox>> boxes;
  std::vector<Mask> class_masks;     // per class, HxW (empty tensor if absent)
};
RenderedSample render_sample(const SynthSpec& spec, std::uint64_t index);

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

/// Absolute (or manifest-relative) path of a sample's image file.
std::string image_path(const DatasetManifest& m, const SampleRecord& r);

/// Path of the class-c mask PGM for a sample: images/NAME.ppm maps to
/// masks/NAME_c<c>.pgm next to it.
std::string mask_path(const DatasetManifest& m, const SampleRecord& r, int c);

/// Concatenates two manifests over the same directory and classes
/// (boxed + weak subsets back into one training set, for example).
DatasetManifest merge_manifests(const DatasetManifest& a,
                                const DatasetManifest& b);

/// Deterministic stratified split into (boxed, weak) subsets. Classes are
/// visited in ascending order; each class c with N_c positive samples
/// contributes round(box_fraction * N_c) boxed samples, counting samples
/// already boxed via an earlier class. A class whose target rounds to zero
/// is an error (all such classes listed). The weak subset is the complement
/// with box annotations stripped.
std::pair<DatasetManifest, DatasetManifest> split_dataset(
    const DatasetManifest& manifest, double box_fraction, std::uint64_t seed);

}  // namespace gwap
