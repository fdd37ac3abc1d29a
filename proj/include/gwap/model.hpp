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

// Small fully convolutional classifier with swappable pooling heads.
// The backbone maps 3xHxW images to KxH/DxW/D features; a head turns the
// feature stack into per-class logits and, for the attention heads, a
// spatial weight map usable for localization.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gwap/error.hpp"
#include "gwap/ops.hpp"
#include "gwap/pooling.hpp"
#include "gwap/rng.hpp"
#include "gwap/tape.hpp"
#include "gwap/tensor.hpp"

namespace gwap {

struct ConvSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

struct BackboneConfig {
  int in_channels = 3;
  std::vector<ConvSpec> layers = {
      {16, 3, 2, 1}, {32, 3, 1, 1}, {64, 3, 2, 1}, {64, 3, 1, 1}};

  int downsample() const {
    int d = 1;
    for (const ConvSpec& l : layers) d *= l.stride;
    return d;
  }
  int feature_channels() const {
    return layers.empty() ? in_channels : layers.back().out_channels;
  }
};

enum class HeadKind {
  kGap,
  kGmp,
  kLse,
  kSam,
  kGwapAgnostic,
  kGwapNoSigmoid,
  kGwapNoExp,
  kGwapSpecific,
};

inline const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kGap: return "gap";
    case HeadKind::kGmp: return "gmp";
    case HeadKind::kLse: return "lse";
    case HeadKind::kSam: return "sam";
    case HeadKind::kGwapAgnostic: return "gwap-agnostic";
    case HeadKind::kGwapNoSigmoid: return "gwap-no-sigmoid";
    case HeadKind::kGwapNoExp: return "gwap-no-exp";
    case HeadKind::kGwapSpecific: return "gwap-specific";
  }
  throw ValidationError("to_string: bad head kind");
}

inline constexpr const char* kValidHeadNames =
    "gap, gmp, lse, sam, gwap-agnostic, gwap-no-sigmoid, gwap-no-exp, "
    "gwap-specific";

inline HeadKind head_from_string(std::string s) {
  for (char& c : s) {
    if (c == '_') c = '-';
  }
  if (s == "gap") return HeadKind::kGap;
  if (s == "gmp") return HeadKind::kGmp;
  if (s == "lse") return HeadKind::kLse;
  if (s == "sam") return HeadKind::kSam;
  if (s == "gwap-agnostic" || s == "gwap") return HeadKind::kGwapAgnostic;
  if (s == "gwap-no-sigmoid") return HeadKind::kGwapNoSigmoid;
  if (s == "gwap-no-exp") return HeadKind::kGwapNoExp;
  if (s == "gwap-specific") return HeadKind::kGwapSpecific;
  throw ValidationError("unknown head '" + s + "'; valid heads: " +
                        kValidHeadNames);
}

inline bool head_is_agnostic_attention(HeadKind h) {
  return h == HeadKind::kSam || h == HeadKind::kGwapAgnostic ||
         h == HeadKind::kGwapNoSigmoid || h == HeadKind::kGwapNoExp;
}

inline AgnosticVariant head_variant(HeadKind h) {
  switch (h) {
    case HeadKind::kSam: return AgnosticVariant::kSam;
    case HeadKind::kGwapAgnostic: return AgnosticVariant::kFull;
    case HeadKind::kGwapNoSigmoid: return AgnosticVariant::kNoSigmoid;
    case HeadKind::kGwapNoExp: return AgnosticVariant::kNoExp;
    default:
      throw ValidationError("head has no class-agnostic attention variant");
  }
}

template <typename S>
struct BoundModel {
  std::vector<Var<S>> conv_w;
  std::vector<Var<S>> conv_b;
  std::optional<Var<S>> cls_w, cls_b;
  std::optional<Var<S>> att_w, att_b;
  std::optional<Var<S>> spec_w, spec_b;
};

/// Bound vars flattened in the same order as Model::named_params().
template <typename S>
std::vector<Var<S>> bound_vars(const BoundModel<S>& b) {
  std::vector<Var<S>> out;
  for (std::size_t i = 0; i < b.conv_w.size(); ++i) {
    out.push_back(b.conv_w[i]);
    out.push_back(b.conv_b[i]);
  }
  if (b.cls_w) {
    out.push_back(*b.cls_w);
    out.push_back(*b.cls_b);
  }
  if (b.att_w) {
    out.push_back(*b.att_w);
    out.push_back(*b.att_b);
  }
  if (b.spec_w) {
    out.push_back(*b.spec_w);
    out.push_back(*b.spec_b);
  }
  return out;
}

template <typename S>
struct ModelOutput {
  Var<S> logits;                      // length C
  Var<S> features;                    // K x h x w backbone output
  std::optional<Var<S>> alpha;        // h x w (agnostic attention heads)
  std::optional<Var<S>> alphas;       // C x h x w (specific head)
  std::optional<Var<S>> score_maps;   // C x h x w (specific head)
};

template <typename S>
class Model {
 public:
  Model(BackboneConfig backbone, HeadKind head, int classes,
        std::uint64_t seed, S lse_sharpness = S(10),
        bool background_in_denominator = true)
      : backbone_(std::move(backbone)),
        head_(head),
        classes_(classes),
        lse_sharpness_(lse_sharpness),
        background_in_denominator_(background_in_denominator) {
    if (classes_ < 1) {
      throw ValidationError("model: needs at least one class");
    }
    if (backbone_.layers.empty()) {
      throw ValidationError("model: backbone needs at least one layer");
    }
    if (head_ == HeadKind::kLse && !(lse_sharpness_ > S(0))) {
      throw ValidationError("model: lse sharpness must be positive");
    }
    SplitMix64 rng = SplitMix64::stream(seed, rng_tag::kInit, 0);
    int cin = backbone_.in_channels;
    for (const ConvSpec& l : backbone_.layers) {
      if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) {
        throw ValidationError("model: bad conv layer spec");
      }
      const double fan_in = static_cast<double>(cin) * l.kernel * l.kernel;
      conv_w_.push_back(normal_tensor(
          rng, {l.out_channels, cin, l.kernel, l.kernel},
          std::sqrt(2.0 / fan_in)));
      conv_b_.push_back(Tensor<S>({l.out_channels}, S(0)));
      cin = l.out_channels;
    }
    const int k = backbone_.feature_channels();
    if (head_ == HeadKind::kGwapSpecific) {
      spec_w_ = normal_tensor(rng, {classes_ + 1, k}, std::sqrt(1.0 / k));
      spec_b_ = Tensor<S>({classes_ + 1}, S(0));
    } else {
      cls_w_ = normal_tensor(rng, {classes_, k}, std::sqrt(1.0 / k));
      cls_b_ = Tensor<S>({classes_}, S(0));
      if (head_is_agnostic_attention(head_)) {
        // Zero attention start: uniform weight map, so training begins
        // from the plain-average behavior.
        att_w_ = Tensor<S>({1, k}, S(0));
        att_b_ = Tensor<S>({1}, S(0));
      }
    }
  }

  const BackboneConfig& backbone() const { return backbone_; }
  HeadKind head() const { return head_; }
  int classes() const { return classes_; }
  S lse_sharpness() const { return lse_sharpness_; }
  bool background_in_denominator() const { return background_in_denominator_; }

  /// Named views of every learnable tensor, in a fixed order.
  std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i) + ".weight", &conv_w_[i]);
      out.emplace_back("conv" + std::to_string(i) + ".bias", &conv_b_[i]);
    }
    if (!cls_w_.empty()) {
      out.emplace_back("cls.weight", &cls_w_);
      out.emplace_back("cls.bias", &cls_b_);
    }
    if (!att_w_.empty()) {
      out.emplace_back("att.weight", &att_w_);
      out.emplace_back("att.bias", &att_b_);
    }
    if (!spec_w_.empty()) {
      out.emplace_back("spec.weight", &spec_w_);
      out.emplace_back("spec.bias", &spec_b_);
    }
    return out;
  }
  std::vector<std::pair<std::string, const Tensor<S>*>> named_params() const {
    std::vector<std::pair<std::string, const Tensor<S>*>> out;
    for (auto& [name, tensor] : const_cast<Model*>(this)->named_params()) {
      out.emplace_back(name, tensor);
    }
    return out;
  }

  /// True for parameters of the attention branch (the agnostic weight-map
  /// head). Used to report them separately; oracle-weight training leaves
  /// them untouched because they never enter the graph.
  static bool is_attention_param(const std::string& name) {
    return name.rfind("att.", 0) == 0;
  }

  /// Registers every parameter on the tape.
  BoundModel<S> bind(Tape<S>& tape, bool requires_grad) const {
    BoundModel<S> b;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      b.conv_w.push_back(tape.leaf(conv_w_[i], requires_grad));
      b.conv_b.push_back(tape.leaf(conv_b_[i], requires_grad));
    }
    if (!cls_w_.empty()) {
      b.cls_w = tape.leaf(cls_w_, requires_grad);
      b.cls_b = tape.leaf(cls_b_, requires_grad);
    }
    if (!att_w_.empty()) {
      b.att_w = tape.leaf(att_w_, requires_grad);
      b.att_b = tape.leaf(att_b_, requires_grad);
    }
    if (!spec_w_.empty()) {
      b.spec_w = tape.leaf(spec_w_, requires_grad);
      b.spec_b = tape.leaf(spec_b_, requires_grad);
    }
    return b;
  }

  /// Write bound values back into the model (after an optimizer step the
  /// caller updates tensors directly; this is for tests that perturb vars).
  void assign_from(const BoundModel<S>& b, const Tape<S>& tape) {
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      conv_w_[i] = tape.value(b.conv_w[i]);
      conv_b_[i] = tape.value(b.conv_b[i]);
    }
    if (b.cls_w) cls_w_ = tape.value(*b.cls_w);
    if (b.cls_b) cls_b_ = tape.value(*b.cls_b);
    if (b.att_w) att_w_ = tape.value(*b.att_w);
    if (b.att_b) att_b_ = tape.value(*b.att_b);
    if (b.spec_w) spec_w_ = tape.value(*b.spec_w);
    if (b.spec_b) spec_b_ = tape.value(*b.spec_b);
  }

  /// Full forward pass. When alpha_override is non-null the agnostic
  /// attention branch is skipped and the given map (already normalized)
  /// is used as the pooling weights; the attention parameters then never
  /// enter the graph.
  ModelOutput<S> forward(Tape<S>& tape, const BoundModel<S>& b,
                         const Tensor<S>& image,
                         const Tensor<S>* alpha_override = nullptr) const {
    if (image.rank() != 3 ||
        image.extent(0) != backbone_.in_channels) {
      throw ShapeError("model forward: image must be " +
                       std::to_string(backbone_.in_channels) + "xHxW, got " +
                       image.shape_string());
    }
    const int d = backbone_.downsample();
    if (image.extent(1) % d != 0 || image.extent(2) % d != 0) {
      throw ValidationError(
          "model forward: image size " + image.shape_string() +
          " not divisible by backbone downsample factor " + std::to_string(d));
    }
    if (alpha_override && head_ != HeadKind::kGap &&
        !head_is_agnostic_attention(head_)) {
      throw ValidationError(
          "model forward: weight-map override needs an averaging or "
          "attention head");
    }
    Var<S> x = tape.leaf(image, false);
    for (std::size_t i = 0; i < b.conv_w.size(); ++i) {
      const ConvSpec& l = backbone_.layers[i];
      x = relu(conv2d(x, b.conv_w[i], b.conv_b[i], l.stride, l.pad));
    }
    ModelOutput<S> out{x, x, std::nullopt, std::nullopt, std::nullopt};

    if (head_ == HeadKind::kGwapSpecific) {
      ClassSpecificResult<S> r =
          class_specific_head(x, *b.spec_w, *b.spec_b, classes_,
                              background_in_denominator_);
      out.logits = r.scores;
      out.alphas = r.alphas;
      out.score_maps = r.score_maps;
      return out;
    }

    Var<S> pooled;
    if (head_ == HeadKind::kGap && !alpha_override) {
      pooled = gap(x);
    } else if (head_ == HeadKind::kGmp) {
      pooled = gmp(x);
    } else if (head_ == HeadKind::kLse) {
      pooled = lse_pool(x, lse_sharpness_);
    } else {
      Var<S> alpha;
      if (alpha_override) {
        Tensor<S> a = *alpha_override;
        validate_weight_map(a);
        if (a.extent(0) != x.value().extent(1) ||
            a.extent(1) != x.value().extent(2)) {
          throw ShapeError("model forward: weight-map override shape " +
                           a.shape_string() + " does not match features " +
                           x.value().shape_string());
        }
        alpha = tape.leaf(std::move(a), false);
      } else {
        alpha = class_agnostic_weights(x, *b.att_w, *b.att_b,
                                       head_variant(head_));
      }
      pooled = gwap_features(x, alpha);
      out.alpha = alpha;
    }
    out.logits = add(matmul(*b.cls_w, pooled), *b.cls_b);
    return out;
  }

  /// One-call inference without gradient bookkeeping.
  ModelOutput<S> infer(Tape<S>& tape, const Tensor<S>& image) const {
    BoundModel<S> b = bind(tape, false);
    return forward(tape, b, image);
  }

 private:
  static Tensor<S> normal_tensor(SplitMix64& rng, std::vector<int> shape,
                                 double stddev) {
    Tensor<S> t(shape);
    for (typename Tensor<S>::Index i = 0; i < t.size(); ++i) {
      // Box-Muller; u1 shifted away from zero.
      const double u1 = 1.0 - rng.next_unit();
      const double u2 = rng.next_unit();
      t[i] = static_cast<S>(stddev * std::sqrt(-2.0 * std::log(u1)) *
                            std::cos(6.283185307179586476925287 * u2));
    }
    return t;
  }

  BackboneConfig backbone_;
  HeadKind head_;
  int classes_;
  S lse_sharpness_;
  bool background_in_denominator_;
  std::vector<Tensor<S>> conv_w_, conv_b_;
  Tensor<S> cls_w_, cls_b_;
  Tensor<S> att_w_, att_b_;
  Tensor<S> spec_w_, spec_b_;
};

/// Mean over classes of the stable binary cross entropy
/// max(z,0) - z*y + log(1 + exp(-|z|)).
template <typename S>
Var<S> sigmoid_ce_loss(const Var<S>& logits, const Tensor<S>& labels) {
  Tape<S>& t = detail::tape_of(logits, "sigmoid_ce_loss");
  const Tensor<S>& z = logits.value();
  if (z.rank() != 1 || labels.rank() != 1 || z.extent(0) != labels.extent(0)) {
    throw ShapeError("sigmoid_ce_loss: logits " + z.shape_string() +
                     " vs labels " + labels.shape_string());
  }
  for (typename Tensor<S>::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != S(0) && labels[i] != S(1)) {
      throw ValidationError("sigmoid_ce_loss: labels must be 0 or 1");
    }
  }
  const typename Tensor<S>::Index n = z.size();
  Tensor<S> loss({1}, S(0));
  S acc = S(0);
  for (typename Tensor<S>::Index i = 0; i < n; ++i) {
    acc += std::max(z[i], S(0)) - z[i] * labels[i] +
           std::log1p(std::exp(-std::abs(z[i])));
  }
  loss[0] = acc / static_cast<S>(n);
  return t.op(std::move(loss), {logits.id},
              [logits, labels, n, r = static_cast<std::int32_t>(
                                    t.node_count())](Tape<S>& t) {
                const S g = t.grad_at(r)[0] / static_cast<S>(n);
                auto gz = t.grad_buffer(logits.id).array();
                const auto& z = t.value(logits).array();
                gz += g * (S(1) / (S(1) + (-z).exp()) - labels.array());
              });
}

/// -log softmax(logits)[label], max-stabilized.
template <typename S>
Var<S> softmax_ce_loss(const Var<S>& logits, int label) {
  Tape<S>& t = detail::tape_of(logits, "softmax_ce_loss");
  const Tensor<S>& z = logits.value();
  if (z.rank() != 1) {
    throw ShapeError("softmax_ce_loss: logits must be rank 1, got " +
                     z.shape_string());
  }
  if (label < 0 || label >= z.extent(0)) {
    throw ValidationError("softmax_ce_loss: label " + std::to_string(label) +
                          " out of range for " + std::to_string(z.extent(0)) +
                          " classes");
  }
  const S m = z.array().maxCoeff();
  const S lse = m + std::log((z.array() - m).exp().sum());
  Tensor<S> loss({1}, lse - z[label]);
  return t.op(std::move(loss), {logits.id},
              [logits, label, r = static_cast<std::int32_t>(
                                  t.node_count())](Tape<S>& t) {
                const S g = t.grad_at(r)[0];
                const auto& z = t.value(logits).array();
                const S m = z.maxCoeff();
                Eigen::Array<S, Eigen::Dynamic, 1> p = (z - m).exp();
                p /= p.sum();
                p[label] -= S(1);
                t.grad_buffer(logits.id).array() += g * p;
              });
}

template <typename S>
void load_checkpoint_params(
    Model<S>& model,
    const std::vector<std::pair<std::string, Tensor<S>>>& tensors,
    const std::string& origin);

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(data_[pos_ + i]);
    }
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw IoError(origin_ + ": truncated checkpoint");
    }
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kMetaRevision = 1.0;

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> named_with_meta(
    const Model<S>& m) {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  std::vector<S> meta = {
      static_cast<S>(kMetaRevision),
      static_cast<S>(static_cast<int>(m.head())),
      static_cast<S>(m.classes()),
      static_cast<S>(m.lse_sharpness()),
      static_cast<S>(m.background_in_denominator() ? 1 : 0),
      static_cast<S>(m.backbone().in_channels),
      static_cast<S>(m.backbone().layers.size()),
  };
  for (const ConvSpec& l : m.backbone().layers) {
    meta.push_back(static_cast<S>(l.out_channels));
    meta.push_back(static_cast<S>(l.kernel));
    meta.push_back(static_cast<S>(l.stride));
    meta.push_back(static_cast<S>(l.pad));
  }
  out.emplace_back("meta",
                   Tensor<S>({static_cast<int>(meta.size())}, meta));
  for (const auto& [name, tensor] : m.named_params()) {
    out.emplace_back(name, *tensor);
  }
  return out;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const Model<S>& model, const std::string& path) {
  const auto tensors = detail::named_with_meta(model);
  std::string out = "GWAP";
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int d = 0; d < tensor.rank(); ++d) {
      detail::put_u32(out, static_cast<std::uint32_t>(tensor.extent(d)));
    }
    for (typename Tensor<S>::Index i = 0; i < tensor.size(); ++i) {
      detail::put_f32(out, static_cast<float>(tensor[i]));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw IoError(path + ": cannot write checkpoint");
  }
}

template <typename S>
Model<S> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw IoError(path + ": cannot open checkpoint");
  }
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(data), path);
  if (r.bytes(4) != "GWAP") {
    throw IoError(path + ": bad checkpoint magic");
  }
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion) {
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor<S>>> tensors;
  constexpr std::uint32_t kMaxName = 1 << 12;
  constexpr std::uint32_t kMaxRank = 4;
  constexpr std::uint32_t kMaxExtent = 1 << 20;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len == 0 || name_len > kMaxName) {
      throw IoError(path + ": implausible tensor name length");
    }
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > kMaxRank) {
      throw IoError(path + ": tensor '" + name + "' has bad rank");
    }
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0 || e > kMaxExtent) {
        throw IoError(path + ": tensor '" + name + "' has bad extent");
      }
      shape.push_back(static_cast<int>(e));
    }
    Tensor<S> t(shape);
    for (typename Tensor<S>::Index j = 0; j < t.size(); ++j) {
      t[j] = static_cast<S>(r.f32());
    }
    tensors.emplace_back(name, std::move(t));
  }
  if (!r.at_end()) {
    throw IoError(path + ": trailing bytes after last tensor");
  }
  if (tensors.empty() || tensors.front().first != "meta") {
    throw IoError(path + ": missing meta tensor");
  }
  const Tensor<S>& meta = tensors.front().second;
  if (meta.rank() != 1 || meta.size() < 7 ||
      static_cast<double>(meta[0]) != detail::kMetaRevision) {
    throw IoError(path + ": bad meta tensor");
  }
  const int head_idx = static_cast<int>(meta[1]);
  if (head_idx < 0 || head_idx > static_cast<int>(HeadKind::kGwapSpecific)) {
    throw IoError(path + ": bad head kind in meta");
  }
  BackboneConfig cfg;
  cfg.in_channels = static_cast<int>(meta[5]);
  const int n_layers = static_cast<int>(meta[6]);
  if (n_layers < 1 || meta.size() != 7 + 4 * n_layers) {
    throw IoError(path + ": bad backbone description in meta");
  }
  cfg.layers.clear();
  for (int l = 0; l < n_layers; ++l) {
    cfg.layers.push_back(ConvSpec{
        static_cast<int>(meta[7 + 4 * l]), static_cast<int>(meta[8 + 4 * l]),
        static_cast<int>(meta[9 + 4 * l]), static_cast<int>(meta[10 + 4 * l])});
  }
  Model<S> model(cfg, static_cast<HeadKind>(head_idx),
                 static_cast<int>(meta[2]), /*seed=*/0,
                 static_cast<S>(meta[3]), meta[4] != S(0));
  load_checkpoint_params(model, tensors, path);
  return model;
}

/// Copies named tensors into an existing model, checking that names and
/// shapes agree exactly with the declared architecture.
template <typename S>
void load_checkpoint_params(
    Model<S>& model,
    const std::vector<std::pair<std::string, Tensor<S>>>& tensors,
    const std::string& origin) {
  auto params = model.named_params();
  std::size_t next = 0;
  for (const auto& [name, tensor] : tensors) {
    if (name == "meta") continue;
    if (next >= params.size() || params[next].first != name) {
      throw IoError(origin + ": unexpected tensor '" + name +
                    "' for this architecture");
    }
    if (!params[next].second->same_shape(tensor)) {
      throw IoError(origin + ": tensor '" + name + "' has shape " +
                    tensor.shape_string() + ", architecture needs " +
                    params[next].second->shape_string());
    }
    *params[next].second = tensor;
    ++next;
  }
  if (next != params.size()) {
    throw IoError(origin + ": checkpoint is missing tensor '" +
                  params[next].first + "'");
  }
}

}  // namespace gwap
