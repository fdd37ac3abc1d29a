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
#include "gwap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gwap/image_io.hpp"
#include "gwap/rng.hpp"

namespace gwap {
namespace {

constexpr int kMaxShapeClasses = 4;
constexpr int kPlacementAttempts = 32;
constexpr int kPlacementMargin = 2;

void validate_spec(const SynthSpec& spec) {
  if (spec.size < 32 || spec.size % 4 != 0) {
    throw ValidationError("synth: size must be >= 32 and divisible by 4");
  }
  if (spec.count < 1) {
    throw ValidationError("synth: count must be >= 1");
  }
  if (spec.class_names.empty() ||
      static_cast<int>(spec.class_names.size()) > kMaxShapeClasses) {
    throw ValidationError("synth: class count must be 1.." +
                          std::to_string(kMaxShapeClasses));
  }
  if (spec.min_objects < 1 || spec.max_objects < spec.min_objects ||
      spec.max_objects > 8) {
    throw ValidationError("synth: objects per image must satisfy 1 <= min <= max <= 8");
  }
  if (spec.noise_amp < 0.0 || spec.noise_amp > 0.45 ||
      spec.texture_amp < 0.0 || spec.texture_amp > 0.45) {
    throw ValidationError("synth: amplitudes must lie in [0, 0.45]");
  }
  if (spec.texture_period < 2.0) {
    throw ValidationError("synth: texture period must be >= 2");
  }
}

struct Placement {
  int kind = 0;  // shape index; objects use their class, distractors any
  double cy = 0, cx = 0, r = 0, phase = 0;
};

// Conservative footprint: every shape fits in the radius-r square around
// its center.
BBox footprint(const Placement& p, int size) {
  const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - p.r)));
  const int x1 = std::min(size - 1, static_cast<int>(std::ceil(p.cx + p.r)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(p.cy + p.r)));
  return BBox{x0, y0, x1, y1};
}

bool collides(const BBox& candidate, const std::vector<BBox>& occupied,
              int size) {
  BBox grown{std::max(0, candidate.x0 - kPlacementMargin),
             std::max(0, candidate.y0 - kPlacementMargin),
             std::min(size - 1, candidate.x1 + kPlacementMargin),
             std::min(size - 1, candidate.y1 + kPlacementMargin)};
  for (const BBox& b : occupied) {
    if (intersection_area(grown, b) > 0) return true;
  }
  return false;
}

// Random placement with rejection; falls back to a deterministic scan at
// minimum radius so an image never silently loses objects just because the
// random attempts were unlucky.
bool place(SplitMix64& rng, int size, double rmin, double rmax,
           const std::vector<BBox>& occupied, Placement& p) {
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    p.r = rng.next_range(rmin, rmax);
    p.cy = rng.next_range(p.r, size - p.r);
    p.cx = rng.next_range(p.r, size - p.r);
    if (!collides(footprint(p, size), occupied, size)) return true;
  }
  p.r = rmin;
  for (int cy = static_cast<int>(rmin); cy <= size - static_cast<int>(rmin);
       ++cy) {
    for (int cx = static_cast<int>(rmin); cx <= size - static_cast<int>(rmin);
         ++cx) {
      p.cy = cy;
      p.cx = cx;
      if (!collides(footprint(p, size), occupied, size)) return true;
    }
  }
  return false;
}

bool inside_shape(int kind, double dx, double dy, double r) {
  switch (kind) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.9 * r;
    case 2: {  // upward triangle
      const double ax = 0.0, ay = -r;
      const double bx = -0.95 * r, by = 0.8 * r;
      const double cx = 0.95 * r, cy = 0.8 * r;
      const auto cross = [](double ux, double uy, double vx, double vy) {
        return ux * vy - uy * vx;
      };
      const double d1 = cross(bx - ax, by - ay, dx - ax, dy - ay);
      const double d2 = cross(cx - bx, cy - by, dx - bx, dy - by);
      const double d3 = cross(ax - cx, ay - cy, dx - cx, dy - cy);
      const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(neg && pos);
    }
    case 3:  // cross
      return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
    default:
      throw ValidationError("synth: unknown shape kind");
  }
}

// Class textures: stripes at class-specific orientations and a checker, all
// with mean 0.5. Distractors (kind -1) get the anti-diagonal orientation no
// labeled class uses.
double texture_value(int kind, int x, int y, double phase, double amp,
                     double period) {
  const double tau = 2.0 * std::numbers::pi / period;
  double t = 0.0;
  switch (kind) {
    case 0: t = std::sin(tau * (x + phase)); break;
    case 1: t = std::sin(tau * (y + phase)); break;
    case 2: t = std::sin(tau * (x + y + phase)); break;
    case 3: t = std::sin(tau * (x + phase)) * std::sin(tau * (y + phase)); break;
    default: t = std::sin(tau * (x - y + phase)); break;
  }
  return 0.5 + amp * t;
}

std::string sample_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06llu",
                static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

RenderedSample render_sample(const SynthSpec& spec, std::uint64_t index) {
  validate_spec(spec);
  const int size = spec.size;
  const int classes = static_cast<int>(spec.class_names.size());
  const double rmin = std::max(5.0, size * 0.11);
  const double rmax = size * 0.19;
  SplitMix64 rng = SplitMix64::stream(spec.seed, rng_tag::kSynthImage, index);

  const int n_obj =
      spec.min_objects +
      static_cast<int>(rng.next_below(
          static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));

  std::vector<Placement> shapes;       // labeled objects
  std::vector<int> shape_class;
  std::vector<Placement> distractors;  // rendered but unlabeled
  std::vector<BBox> occupied;
  for (int i = 0; i < n_obj; ++i) {
    const int cls = static_cast<int>(rng.next_below(classes));
    Placement p;
    p.kind = cls;
    const bool ok = place(rng, size, rmin, rmax, occupied, p);
    p.phase = rng.next_range(0.0, spec.texture_period);
    if (!ok) continue;  // image too crowded; drop the object
    occupied.push_back(footprint(p, size));
    shapes.push_back(p);
    shape_class.push_back(cls);
  }
  if (spec.distractors && rng.next_bool()) {
    Placement p;
    p.kind = static_cast<int>(rng.next_below(kMaxShapeClasses));
    const bool ok = place(rng, size, rmin, rmax, occupied, p);
    p.phase = rng.next_range(0.0, spec.texture_period);
    if (ok) {
      occupied.push_back(footprint(p, size));
      distractors.push_back(p);
    }
  }

  // Value-matched noise background, then textured shapes on top.
  Tensor<float> gray({size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      gray.at(y, x) = static_cast<float>(
          0.5 + spec.noise_amp * (2.0 * rng.next_unit() - 1.0));
    }
  }

  RenderedSample out;
  out.class_masks.assign(static_cast<std::size_t>(classes), Mask());
  for (std::size_t s = 0; s < shapes.size() + distractors.size(); ++s) {
    const bool is_distractor = s >= shapes.size();
    const Placement& p =
        is_distractor ? distractors[s - shapes.size()] : shapes[s];
    const int cls = is_distractor ? -1 : shape_class[s];
    const BBox fp = footprint(p, size);
    BBox tight;
    bool any = false;
    for (int y = fp.y0; y <= fp.y1; ++y) {
      for (int x = fp.x0; x <= fp.x1; ++x) {
        if (!inside_shape(p.kind, x - p.cx, y - p.cy, p.r)) continue;
        gray.at(y, x) = static_cast<float>(texture_value(
            cls, x, y, p.phase, spec.texture_amp, spec.texture_period));
        if (cls >= 0) {
          Mask& m = out.class_masks[static_cast<std::size_t>(cls)];
          if (m.empty()) m = Mask({size, size});
          m.at(y, x) = 1;
        }
        if (!any) {
          tight = BBox{x, y, x, y};
          any = true;
        } else {
          tight.x0 = std::min(tight.x0, x);
          tight.x1 = std::max(tight.x1, x);
          tight.y0 = std::min(tight.y0, y);
          tight.y1 = std::max(tight.y1, y);
        }
      }
    }
    if (cls >= 0 && any) {
      out.label_mask |= 1u << cls;
      out.boxes.emplace_back(cls, tight);
    }
  }

  out.image = Tensor<std::uint8_t>({3, size, size});
  const Tensor<std::uint8_t> g8 = quantize_unit(gray);
  for (Tensor<std::uint8_t>::Index i = 0; i < g8.size(); ++i) {
    out.image[i] = g8[i];
    out.image[g8.size() + i] = g8[i];
    out.image[2 * g8.size() + i] = g8[i];
  }
  return out;
}

DatasetManifest generate_dataset(const SynthSpec& spec,
                                 const std::string& out_dir) {
  validate_spec(spec);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) {
    throw IoError(out_dir + ": cannot create dataset directories: " +
                  ec.message());
  }

  DatasetManifest manifest;
  manifest.height = spec.size;
  manifest.width = spec.size;
  manifest.class_names = spec.class_names;
  manifest.seed = spec.seed;
  manifest.dir = out_dir;

  for (int i = 0; i < spec.count; ++i) {
    const RenderedSample sample =
        render_sample(spec, static_cast<std::uint64_t>(i));
    SampleRecord rec;
    rec.path = "images/" + sample_name(static_cast<std::uint64_t>(i)) + ".ppm";
    rec.label_mask = sample.label_mask;
    rec.boxes = sample.boxes;
    write_ppm(image_path(manifest, rec), sample.image);
    for (int c = 0; c < manifest.classes(); ++c) {
      const Mask& m = sample.class_masks[static_cast<std::size_t>(c)];
      if (!m.empty()) {
        write_mask(mask_path(manifest, rec, c), m);
      }
    }
    manifest.samples.push_back(std::move(rec));
  }
  save_manifest(manifest,
                (fs::path(out_dir) / "manifest.tsv").string());
  return manifest;
}

std::string image_path(const DatasetManifest& m, const SampleRecord& r) {
  if (m.dir.empty()) return r.path;
  return m.dir + "/" + r.path;
}

std::string mask_path(const DatasetManifest& m, const SampleRecord& r, int c) {
  if (c < 0 || c >= m.classes()) {
    throw ValidationError("mask_path: class index out of range");
  }
  std::string rel = r.path;
  const std::size_t slash = rel.find_last_of('/');
  std::string dir = slash == std::string::npos ? "" : rel.substr(0, slash);
  std::string name = slash == std::string::npos ? rel : rel.substr(slash + 1);
  if (dir.size() >= 6 && dir.compare(dir.size() - 6, 6, "images") == 0) {
    dir = dir.substr(0, dir.size() - 6) + "masks";
  }
  if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".ppm") == 0) {
    name = name.substr(0, name.size() - 4);
  }
  name += "_c" + std::to_string(c) + ".pgm";
  std::string rel_mask = dir.empty() ? name : dir + "/" + name;
  if (m.dir.empty()) return rel_mask;
  return m.dir + "/" + rel_mask;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(path + ": cannot open for writing");
  }
  out << "# gwap-dataset v" << manifest.version << "\n";
  out << "# size " << manifest.height << " " << manifest.width << "\n";
  out << "# classes";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) {
    out << (i ? "," : " ") << manifest.class_names[i];
  }
  out << "\n";
  out << "# seed " << manifest.seed << "\n";
  for (const SampleRecord& r : manifest.samples) {
    out << r.path << '\t' << r.label_mask;
    if (!r.boxes.empty()) {
      out << '\t';
      for (std::size_t i = 0; i < r.boxes.size(); ++i) {
        const auto& [cls, box] = r.boxes[i];
        if (i) out << ';';
        out << cls << ':' << box.x0 << ',' << box.y0 << ',' << box.x1 << ','
            << box.y1;
      }
    }
    out << '\n';
  }
  if (!out) {
    throw IoError(path + ": write failed");
  }
}

namespace {

std::vector<std::string> split_string(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::int64_t parse_int(const std::string& tok, const std::string& path,
                       int line_no) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(tok, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != tok.size() || tok.empty()) {
    throw IoError(path + ":" + std::to_string(line_no) +
                  ": bad integer '" + tok + "'");
  }
  return v;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(path + ": cannot open for reading");
  }
  DatasetManifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  int line_no = 0;
  bool saw_version = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hdr(line.substr(1));
      std::string key;
      hdr >> key;
      if (key == "gwap-dataset") {
        std::string v;
        hdr >> v;
        if (v.size() < 2 || v[0] != 'v') {
          throw IoError(path + ": bad version tag '" + v + "'");
        }
        m.version = static_cast<int>(parse_int(v.substr(1), path, line_no));
        saw_version = true;
      } else if (key == "size") {
        hdr >> m.height >> m.width;
        if (!hdr || m.height <= 0 || m.width <= 0) {
          throw IoError(path + ": bad size header");
        }
      } else if (key == "classes") {
        std::string names;
        hdr >> names;
        m.class_names = split_string(names, ',');
      } else if (key == "seed") {
        std::string s;
        hdr >> s;
        m.seed = std::stoull(s);
      } else {
        throw IoError(path + ": unknown header '" + key + "'");
      }
      continue;
    }
    const std::vector<std::string> fields = split_string(line, '\t');
    if (fields.size() < 2 || fields.size() > 3) {
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": expected 2 or 3 tab-separated fields");
    }
    SampleRecord rec;
    rec.path = fields[0];
    rec.label_mask =
        static_cast<std::uint32_t>(parse_int(fields[1], path, line_no));
    if (fields.size() == 3 && !fields[2].empty()) {
      for (const std::string& tok : split_string(fields[2], ';')) {
        const std::size_t colon = tok.find(':');
        if (colon == std::string::npos) {
          throw IoError(path + ":" + std::to_string(line_no) +
                        ": bad box token '" + tok + "'");
        }
        const int cls =
            static_cast<int>(parse_int(tok.substr(0, colon), path, line_no));
        const std::vector<std::string> coords =
            split_string(tok.substr(colon + 1), ',');
        if (coords.size() != 4) {
          throw IoError(path + ":" + std::to_string(line_no) +
                        ": box needs 4 coordinates");
        }
        BBox box{static_cast<int>(parse_int(coords[0], path, line_no)),
                 static_cast<int>(parse_int(coords[1], path, line_no)),
                 static_cast<int>(parse_int(coords[2], path, line_no)),
                 static_cast<int>(parse_int(coords[3], path, line_no))};
        box.require_valid("load_manifest");
        if (cls < 0 || cls >= m.classes()) {
          throw IoError(path + ":" + std::to_string(line_no) +
                        ": box class out of range");
        }
        if (!rec.has_label(cls)) {
          throw IoError(path + ":" + std::to_string(line_no) +
                        ": box for class without label bit");
        }
        rec.boxes.emplace_back(cls, box);
      }
    }
    if (rec.label_mask >> m.classes()) {
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": label bits beyond class count");
    }
    m.samples.push_back(std::move(rec));
  }
  if (!saw_version || m.class_names.empty() || m.height <= 0) {
    throw IoError(path + ": incomplete manifest header");
  }
  return m;
}

DatasetManifest merge_manifests(const DatasetManifest& a,
                                const DatasetManifest& b) {
  if (a.class_names != b.class_names || a.height != b.height ||
      a.width != b.width) {
    throw ValidationError("merge: manifests disagree on classes or size");
  }
  if (a.dir != b.dir) {
    throw ValidationError(
        "merge: manifests resolve paths against different directories");
  }
  DatasetManifest out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(
    const DatasetManifest& manifest, double box_fraction, std::uint64_t seed) {
  if (!(box_fraction > 0.0) || box_fraction > 1.0) {
    throw ValidationError("split: box_fraction must lie in (0, 1]");
  }
  const int classes = manifest.classes();
  const std::size_t n = manifest.samples.size();
  std::vector<std::int64_t> targets(static_cast<std::size_t>(classes), 0);
  std::string zero_classes;
  for (int c = 0; c < classes; ++c) {
    std::int64_t count = 0;
    for (const SampleRecord& r : manifest.samples) {
      count += r.has_label(c) ? 1 : 0;
    }
    targets[static_cast<std::size_t>(c)] =
        std::llround(box_fraction * static_cast<double>(count));
    if (targets[static_cast<std::size_t>(c)] == 0) {
      zero_classes += (zero_classes.empty() ? "" : ", ") +
                      manifest.class_names[static_cast<std::size_t>(c)];
    }
  }
  if (!zero_classes.empty()) {
    throw ValidationError(
        "split: box_fraction yields zero boxed images for: " + zero_classes);
  }

  std::vector<char> chosen(n, 0);
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> pool;
    std::int64_t have = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!manifest.samples[i].has_label(c)) continue;
      if (chosen[i]) {
        ++have;
      } else {
        pool.push_back(i);
      }
    }
    std::int64_t need = targets[static_cast<std::size_t>(c)] - have;
    SplitMix64 rng = SplitMix64::stream(seed, rng_tag::kSplit,
                                        static_cast<std::uint64_t>(c));
    for (std::int64_t j = 0; need > 0 && j < static_cast<std::int64_t>(pool.size());
         ++j, --need) {
      const std::size_t k =
          static_cast<std::size_t>(j) +
          static_cast<std::size_t>(rng.next_below(pool.size() - j));
      std::swap(pool[static_cast<std::size_t>(j)], pool[k]);
      chosen[pool[static_cast<std::size_t>(j)]] = 1;
    }
  }

  DatasetManifest boxed = manifest;
  DatasetManifest weak = manifest;
  boxed.samples.clear();
  weak.samples.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) {
      boxed.samples.push_back(manifest.samples[i]);
    } else {
      SampleRecord r = manifest.samples[i];
      r.boxes.clear();
      weak.samples.push_back(std::move(r));
    }
  }
  return {std::move(boxed), std::move(weak)};
}

}  // namespace gwap
