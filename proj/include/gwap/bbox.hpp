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

#include <algorithm>
#include <cstdint>
#include <string>

#include "gwap/error.hpp"

namespace gwap {

/// Axis-aligned pixel rectangle, inclusive on both ends: a box covering a
/// single pixel has x0 == x1 and y0 == y1.
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  std::int64_t width() const { return std::int64_t{x1} - x0 + 1; }
  std::int64_t height() const { return std::int64_t{y1} - y0 + 1; }
  std::int64_t area() const { return width() * height(); }

  bool valid() const { return x0 <= x1 && y0 <= y1; }

  void require_valid(const char* who) const {
    if (!valid()) {
      throw ValidationError(std::string(who) + ": invalid box " + to_string());
    }
  }

  bool operator==(const BBox&) const = default;

  std::string to_string() const {
    return "(" + std::to_string(x0) + "," + std::to_string(y0) + "," +
           std::to_string(x1) + "," + std::to_string(y1) + ")";
  }
};

/// Intersection pixel count of two valid boxes.
inline std::int64_t intersection_area(const BBox& a, const BBox& b) {
  const int x0 = std::max(a.x0, b.x0);
  const int y0 = std::max(a.y0, b.y0);
  const int x1 = std::min(a.x1, b.x1);
  const int y1 = std::min(a.y1, b.y1);
  if (x0 > x1 || y0 > y1) return 0;
  return (std::int64_t{x1} - x0 + 1) * (std::int64_t{y1} - y0 + 1);
}

}  // namespace gwap
