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

// Model construction, head behavior, losses, and checkpoint round trips.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gwap/model.hpp"
#include "test_util.hpp"

using gwap::BackboneConfig;
using gwap::HeadKind;
using gwap::Model;
using gwap::SplitMix64;
using gwap::Tape;
using gwap::Tensor;

namespace {

BackboneConfig tiny_backbone() {
  BackboneConfig bc;
  bc.layers = {{8, 3, 2, 1}, {8, 3, 1, 1}};
  return bc;
}

template <typename S>
Tensor<S> infer_logits(const Model<S>& m, const Tensor<S>& image) {
  Tape<S> t;
  t.set_recording(false);
  return m.infer(t, image).logits.value();
}

void patch_bytes(const std::string& path, std::size_t offset,
                 const std::string& bytes) {
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  REQUIRE(f.good());
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(f.good());
}

std::string f32_bytes(float v) {
  std::string out(4, '\0');
  std::memcpy(out.data(), &v, 4);
  return out;
}

}  // namespace

TEST_CASE("head names round trip and accept underscore aliases") {
  using gwap::head_from_string;
  for (const HeadKind h :
       {HeadKind::kGap, HeadKind::kGmp, HeadKind::kLse, HeadKind::kSam,
        HeadKind::kGwapAgnostic, HeadKind::kGwapNoSigmoid,
        HeadKind::kGwapNoExp, HeadKind::kGwapSpecific}) {
    CHECK(head_from_string(to_string(h)) == h);
  }
  CHECK(head_from_string("gwap") == HeadKind::kGwapAgnostic);
  CHECK(head_from_string("gwap_no_sigmoid") == HeadKind::kGwapNoSigmoid);
  CHECK(head_from_string("gwap_specific") == HeadKind::kGwapSpecific);
  CHECK_THROWS_AS(head_from_string("avgpool"), gwap::ValidationError);
}

TEST_CASE("constructor validates its configuration") {
  const BackboneConfig bc = tiny_backbone();
  CHECK_THROWS_AS(Model<double>(bc, HeadKind::kGap, 0, 1),
                  gwap::ValidationError);
  BackboneConfig empty;
  empty.layers.clear();
  CHECK_THROWS_AS(Model<double>(empty, HeadKind::kGap, 3, 1),
                  gwap::ValidationError);
  CHECK_THROWS_AS(Model<double>(bc, HeadKind::kLse, 3, 1, 0.0),
                  gwap::ValidationError);
  BackboneConfig bad = bc;
  bad.layers[0].stride = 0;
  CHECK_THROWS_AS(Model<double>(bad, HeadKind::kGap, 3, 1),
                  gwap::ValidationError);
}

TEST_CASE("parameter sets follow the head family") {
  const BackboneConfig bc = tiny_backbone();
  Model<double> agnostic(bc, HeadKind::kGwapAgnostic, 3, 1);
  std::vector<std::string> names;
  for (const auto& [name, tensor] : agnostic.named_params()) {
    names.push_back(name);
  }
  CHECK(names == std::vector<std::string>{
                     "conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias",
                     "cls.weight", "cls.bias", "att.weight", "att.bias"});
  CHECK(gwap::Model<double>::is_attention_param("att.weight"));
  CHECK(!gwap::Model<double>::is_attention_param("cls.weight"));

  Model<double> specific(bc, HeadKind::kGwapSpecific, 3, 1);
  names.clear();
  for (const auto& [name, tensor] : specific.named_params()) {
    names.push_back(name);
  }
  CHECK(names == std::vector<std::string>{
                     "conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias",
                     "spec.weight", "spec.bias"});

  Model<double> plain(bc, HeadKind::kGap, 3, 1);
  names.clear();
  for (const auto& [name, tensor] : plain.named_params()) {
    names.push_back(name);
  }
  CHECK(names == std::vector<std::string>{
                     "conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias",
                     "cls.weight", "cls.bias"});

  // Attention starts at zero so the initial weight map is uniform.
  for (const auto& [name, tensor] : agnostic.named_params()) {
    if (gwap::Model<double>::is_attention_param(name)) {
      CHECK(tensor->array().abs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("every agnostic attention head starts as plain averaging") {
  const BackboneConfig bc = tiny_backbone();
  SplitMix64 g(79);
  for (const std::uint64_t seed : {1ull, 2ull}) {
    const Model<double> ref(bc, HeadKind::kGap, 3, seed);
    const Tensor<double> image = testutil::rand_tensor({3, 12, 12}, g, 0.0, 1.0);
    const Tensor<double> want = infer_logits(ref, image);
    for (const HeadKind h : {HeadKind::kSam, HeadKind::kGwapAgnostic,
                             HeadKind::kGwapNoSigmoid, HeadKind::kGwapNoExp}) {
      CAPTURE(to_string(h));
      const Model<double> m(bc, h, 3, seed);
      const Tensor<double> got = infer_logits(m, image);
      REQUIRE(got.same_shape(want));
      for (int c = 0; c < 3; ++c) {
        CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("a uniform weight-map override reproduces gap pooling") {
  const BackboneConfig bc = tiny_backbone();
  const Model<double> m(bc, HeadKind::kGap, 3, 5);
  SplitMix64 g(83);
  const Tensor<double> image = testutil::rand_tensor({3, 12, 12}, g, 0.0, 1.0);
  const Tensor<double> uniform({6, 6}, 1.0 / 36.0);

  Tape<double> t;
  t.set_recording(false);
  const auto b = m.bind(t, false);
  const Tensor<double> plain = m.forward(t, b, image).logits.value();
  const Tensor<double> forced =
      m.forward(t, b, image, &uniform).logits.value();
  for (int c = 0; c < 3; ++c) {
    CHECK(forced[c] == doctest::Approx(plain[c]).epsilon(1e-9));
  }
}

TEST_CASE("forward rejects bad images and misplaced overrides") {
  const BackboneConfig bc = tiny_backbone();  // downsample factor 2
  const Model<double> m(bc, HeadKind::kGmp, 3, 5);
  Tape<double> t;
  t.set_recording(false);
  const auto b = m.bind(t, false);
  CHECK_THROWS_AS((void)m.forward(t, b, Tensor<double>({1, 12, 12}, 0.0)),
                  gwap::ShapeError);
  CHECK_THROWS_AS((void)m.forward(t, b, Tensor<double>({3, 13, 13}, 0.0)),
                  gwap::ValidationError);

  const Tensor<double> image({3, 12, 12}, 0.25);
  const Tensor<double> uniform({6, 6}, 1.0 / 36.0);
  // Max pooling has no use for a weight map.
  CHECK_THROWS_AS((void)m.forward(t, b, image, &uniform),
                  gwap::ValidationError);

  const Model<double> ag(bc, HeadKind::kGwapAgnostic, 3, 5);
  const auto ab = ag.bind(t, false);
  const Tensor<double> wrong_size({4, 4}, 1.0 / 16.0);
  CHECK_THROWS_AS((void)ag.forward(t, ab, image, &wrong_size),
                  gwap::ShapeError);
  const Tensor<double> not_normalized({6, 6}, 1.0);
  CHECK_THROWS_AS((void)ag.forward(t, ab, image, &not_normalized),
                  gwap::NumericError);
}

TEST_CASE("valid convolutions make gmp logits translation invariant") {
  // A single pad-free layer keeps feature cells pure functions of their
  // receptive fields; zero bias keeps the background at exactly relu(0).
  // Shifting the stimulus inside the frame then permutes the nonzero
  // feature cells, and the per-channel max cannot change.
  BackboneConfig bc;
  bc.layers = {{8, 3, 1, 0}};
  const Model<double> m(bc, HeadKind::kGmp, 3, 9);
  SplitMix64 g(89);

  Tensor<double> base({3, 12, 12}, 0.0);
  const Tensor<double> patch = testutil::rand_tensor({3, 4, 4}, g, 0.5, 1.0);
  Tensor<double> shifted = base;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        base.at(c, 2 + y, 2 + x) = patch.at(c, y, x);
        shifted.at(c, 5 + y, 4 + x) = patch.at(c, y, x);
      }
    }
  }
  const Tensor<double> a = infer_logits(m, base);
  const Tensor<double> b = infer_logits(m, shifted);
  for (int c = 0; c < 3; ++c) {
    CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-12));
  }
}

TEST_CASE("loss fixtures pin the conventions") {
  Tape<double> t;
  // All-zero logits: each term is log 2 regardless of the label.
  const gwap::Var<double> z = t.leaf(Tensor<double>({3}, 0.0));
  const Tensor<double> labels({3}, {1.0, 0.0, 1.0});
  CHECK(sigmoid_ce_loss(z, labels).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Uniform logits over 4 classes: cross entropy is log 4.
  const gwap::Var<double> u = t.leaf(Tensor<double>({4}, 1.7));
  CHECK(softmax_ce_loss(u, 2).value()[0] ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  CHECK_THROWS_AS((void)sigmoid_ce_loss(z, Tensor<double>({3}, 0.5)),
                  gwap::ValidationError);
  CHECK_THROWS_AS((void)sigmoid_ce_loss(z, Tensor<double>({2}, 1.0)),
                  gwap::ShapeError);
  CHECK_THROWS_AS((void)softmax_ce_loss(u, 4), gwap::ValidationError);
  CHECK_THROWS_AS((void)softmax_ce_loss(u, -1), gwap::ValidationError);
  const gwap::Var<double> mat = t.leaf(Tensor<double>({2, 2}, 0.0));
  CHECK_THROWS_AS((void)softmax_ce_loss(mat, 0), gwap::ShapeError);
}

TEST_CASE("checkpoints round trip bit for bit") {
  testutil::TempDir dir;
  for (const HeadKind h : {HeadKind::kGwapAgnostic, HeadKind::kGwapSpecific,
                           HeadKind::kLse}) {
    CAPTURE(to_string(h));
    const Model<float> m(tiny_backbone(), h, 3, 7, 2.5f, false);
    const std::string path = dir.file(std::string("m_") + to_string(h) + ".ckpt");
    gwap::save_checkpoint(m, path);
    const Model<float> back = gwap::load_checkpoint<float>(path);
    CHECK(back.head() == m.head());
    CHECK(back.classes() == m.classes());
    CHECK(back.lse_sharpness() == m.lse_sharpness());
    CHECK(back.background_in_denominator() == m.background_in_denominator());

    const auto pa = m.named_params();
    const auto pb = back.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].first == pb[i].first);
      REQUIRE(pa[i].second->same_shape(*pb[i].second));
      REQUIRE(std::memcmp(pa[i].second->data(), pb[i].second->data(),
                          sizeof(float) *
                              static_cast<std::size_t>(pa[i].second->size())) ==
              0);
    }

    // Same prediction from the reloaded model.
    SplitMix64 g(97);
    const Tensor<float> image =
        testutil::rand_tensor({3, 12, 12}, g, 0.0, 1.0).cast<float>();
    const Tensor<float> la = infer_logits(m, image);
    const Tensor<float> lb = infer_logits(back, image);
    for (int c = 0; c < 3; ++c) REQUIRE(la[c] == lb[c]);
  }
}

TEST_CASE("checkpoint loading rejects corrupted files") {
  testutil::TempDir dir;
  const Model<float> m(tiny_backbone(), HeadKind::kGwapAgnostic, 3, 7);
  const std::string good = dir.file("good.ckpt");
  gwap::save_checkpoint(m, good);
  const std::string data = testutil::read_file(good);

  CHECK_THROWS_AS(gwap::load_checkpoint<float>(dir.file("absent.ckpt")),
                  gwap::IoError);

  const std::string bad_magic = dir.file("magic.ckpt");
  testutil::write_file(bad_magic, "X" + data.substr(1));
  CHECK_THROWS_AS(gwap::load_checkpoint<float>(bad_magic), gwap::IoError);

  const std::string truncated = dir.file("trunc.ckpt");
  testutil::write_file(truncated, data.substr(0, data.size() - 5));
  CHECK_THROWS_AS(gwap::load_checkpoint<float>(truncated), gwap::IoError);

  const std::string trailing = dir.file("trail.ckpt");
  testutil::write_file(trailing, data + std::string(1, '\0'));
  CHECK_THROWS_AS(gwap::load_checkpoint<float>(trailing), gwap::IoError);

  // Little-endian u32 version field sits right after the magic.
  const std::string bad_version = dir.file("version.ckpt");
  testutil::write_file(bad_version, data);
  patch_bytes(bad_version, 4, std::string("\x02\x00\x00\x00", 4));
  CHECK_THROWS_AS(gwap::load_checkpoint<float>(bad_version), gwap::IoError);

  // First payload float of the meta tensor is the revision.
  const std::string bad_meta = dir.file("meta.ckpt");
  testutil::write_file(bad_meta, data);
  patch_bytes(bad_meta, 28, f32_bytes(2.0f));
  CHECK_THROWS_AS(gwap::load_checkpoint<float>(bad_meta), gwap::IoError);

  // Second payload float encodes the head kind.
  const std::string bad_head = dir.file("head.ckpt");
  testutil::write_file(bad_head, data);
  patch_bytes(bad_head, 32, f32_bytes(99.0f));
  CHECK_THROWS_AS(gwap::load_checkpoint<float>(bad_head), gwap::IoError);
}

TEST_CASE("parameter loading demands the exact architecture") {
  Model<float> gap_model(tiny_backbone(), HeadKind::kGap, 3, 7);
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  for (const auto& [name, tensor] : gap_model.named_params()) {
    tensors.emplace_back(name, *tensor);
  }

  // Loading gap parameters into an attention model stops at the missing
  // attention tensors.
  Model<float> att_model(tiny_backbone(), HeadKind::kGwapAgnostic, 3, 7);
  CHECK_THROWS_AS(gwap::load_checkpoint_params(att_model, tensors, "test"),
                  gwap::IoError);

  // A renamed tensor is unexpected.
  auto renamed = tensors;
  renamed[0].first = "conv9.weight";
  CHECK_THROWS_AS(gwap::load_checkpoint_params(gap_model, renamed, "test"),
                  gwap::IoError);

  // A reshaped tensor cannot be accepted silently.
  auto reshaped = tensors;
  reshaped[1].second = Tensor<float>({16}, 0.0f);
  CHECK_THROWS_AS(gwap::load_checkpoint_params(gap_model, reshaped, "test"),
                  gwap::IoError);

  // A class-count mismatch shows up as a cls.weight shape error.
  Model<float> wide(tiny_backbone(), HeadKind::kGap, 4, 7);
  CHECK_THROWS_AS(gwap::load_checkpoint_params(wide, tensors, "test"),
                  gwap::IoError);

  // The unmodified set loads cleanly.
  CHECK_NOTHROW(gwap::load_checkpoint_params(gap_model, tensors, "test"));
}
