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
#pragma once

#include <cstdint>

namespace gwap {

/// SplitMix64 counter generator (Steele, Lea & Flood 2014). The state
/// advances by a fixed odd constant and the output is a bijective hash of
/// the state, so arbitrary substreams can be addressed in O(1). Every
/// random decision in this project flows through this generator; the
/// update and output constants below are part of the on-disk determinism
/// contract and must not change.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += kGamma);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_unit() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double next_range(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  /// Unbiased uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  bool next_bool() { return (next() & 1ull) != 0; }

  /// Independent substream k of a tagged stream rooted at `seed`. Defined as
  /// SplitMix64 seeded with hash(seed ^ tag) + k * kGamma, where hash is one
  /// SplitMix64 output step. Substreams indexed by k are therefore the tagged
  /// stream fast-forwarded k steps; distinct tags decorrelate streams.
  static SplitMix64 stream(std::uint64_t seed, std::uint64_t tag,
                           std::uint64_t k = 0) {
    SplitMix64 h(seed ^ tag);
    return SplitMix64(h.next() + k * kGamma);
  }

 private:
  std::uint64_t state_;
};

/// Stream tags. Fixed constants, part of the determinism contract.
namespace rng_tag {
constexpr std::uint64_t kSynthImage = 0x53594E5449ull;   // per-image content
constexpr std::uint64_t kSplit = 0x53504C4954ull;        // dataset splitting
constexpr std::uint64_t kInit = 0x494E4954ull;           // parameter init
constexpr std::uint64_t kBatch = 0x4241544348ull;        // batch sampling
constexpr std::uint64_t kAugment = 0x41554Dull;          // flip decisions
}  // namespace rng_tag

}  // namespace gwap
