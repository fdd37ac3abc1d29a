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
#include "gwap/image_io.hpp"

#include <cctype>
#include <cstring>
#include <fstream>
#include <vector>

namespace gwap {
namespace {

constexpr int kMaxExtent = 1 << 15;

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) {
    throw IoError(path + ": truncated header");
  }
  return tok;
}

int parse_extent(const std::string& tok, const std::string& path) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &pos);
  } catch (const std::exception&) {
    throw IoError(path + ": bad header token '" + tok + "'");
  }
  if (pos != tok.size() || v <= 0 || v > kMaxExtent) {
    throw IoError(path + ": bad image extent '" + tok + "'");
  }
  return v;
}

// Header after the magic: width, height, maxval, then one whitespace byte.
void read_header(std::istream& in, const std::string& path, int& w, int& h) {
  w = parse_extent(next_token(in, path), path);
  h = parse_extent(next_token(in, path), path);
  const std::string maxval = next_token(in, path);
  if (maxval != "255") {
    throw IoError(path + ": unsupported maxval '" + maxval + "'");
  }
}

std::vector<std::uint8_t> read_payload(std::istream& in,
                                       const std::string& path,
                                       std::size_t bytes) {
  std::vector<std::uint8_t> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw IoError(path + ": truncated pixel data");
  }
  return buf;
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(path + ": cannot open for reading");
  }
  return in;
}

std::ofstream create_binary(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(path + ": cannot open for writing");
  }
  return out;
}

void check_magic(std::istream& in, const std::string& path,
                 const char* magic) {
  char got[2] = {0, 0};
  in.read(got, 2);
  if (in.gcount() != 2 || got[0] != magic[0] || got[1] != magic[1]) {
    throw IoError(path + ": not a " + std::string(magic) + " file");
  }
}

}  // namespace

Tensor<std::uint8_t> read_ppm(const std::string& path) {
  std::ifstream in = open_binary(path);
  check_magic(in, path, "P6");
  int w = 0, h = 0;
  read_header(in, path, w, h);
  const auto pixels = static_cast<std::size_t>(w) * h;
  const std::vector<std::uint8_t> raw = read_payload(in, path, pixels * 3);
  Tensor<std::uint8_t> img({3, h, w});
  for (std::size_t p = 0; p < pixels; ++p) {
    img[static_cast<Tensor<std::uint8_t>::Index>(p)] = raw[p * 3];
    img[static_cast<Tensor<std::uint8_t>::Index>(pixels + p)] = raw[p * 3 + 1];
    img[static_cast<Tensor<std::uint8_t>::Index>(2 * pixels + p)] =
        raw[p * 3 + 2];
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor<std::uint8_t>& rgb) {
  if (rgb.rank() != 3 || rgb.extent(0) != 3) {
    throw ShapeError("write_ppm: need 3xHxW, got " + rgb.shape_string());
  }
  const int h = rgb.extent(1), w = rgb.extent(2);
  std::ofstream out = create_binary(path);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto pixels = static_cast<std::size_t>(w) * h;
  std::vector<std::uint8_t> raw(pixels * 3);
  for (std::size_t p = 0; p < pixels; ++p) {
    raw[p * 3] = rgb[static_cast<Tensor<std::uint8_t>::Index>(p)];
    raw[p * 3 + 1] = rgb[static_cast<Tensor<std::uint8_t>::Index>(pixels + p)];
    raw[p * 3 + 2] =
        rgb[static_cast<Tensor<std::uint8_t>::Index>(2 * pixels + p)];
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) {
    throw IoError(path + ": write failed");
  }
}

Tensor<std::uint8_t> read_pgm(const std::string& path) {
  std::ifstream in = open_binary(path);
  check_magic(in, path, "P5");
  int w = 0, h = 0;
  read_header(in, path, w, h);
  const auto pixels = static_cast<std::size_t>(w) * h;
  const std::vector<std::uint8_t> raw = read_payload(in, path, pixels);
  Tensor<std::uint8_t> img({h, w});
  std::memcpy(img.data(), raw.data(), pixels);
  return img;
}

void write_pgm(const std::string& path, const Tensor<std::uint8_t>& gray) {
  if (gray.rank() != 2) {
    throw ShapeError("write_pgm: need HxW, got " + gray.shape_string());
  }
  const int h = gray.extent(0), w = gray.extent(1);
  std::ofstream out = create_binary(path);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()),
            static_cast<std::streamsize>(gray.size()));
  if (!out) {
    throw IoError(path + ": write failed");
  }
}

Mask read_mask(const std::string& path) {
  const Tensor<std::uint8_t> gray = read_pgm(path);
  Mask mask(gray.shape());
  for (Mask::Index i = 0; i < gray.size(); ++i) {
    mask[i] = gray[i] > 127 ? 1 : 0;
  }
  return mask;
}

void write_mask(const std::string& path, const Mask& mask) {
  Tensor<std::uint8_t> gray(mask.shape());
  for (Mask::Index i = 0; i < mask.size(); ++i) {
    gray[i] = mask[i] ? 255 : 0;
  }
  write_pgm(path, gray);
}

}  // namespace gwap
