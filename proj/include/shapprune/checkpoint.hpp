#pragma once

// Dense model checkpoints.
//
//   MODL  backbone u8 | m, n, d u64 | field offsets (m+1) u64
//         | MLP layer count u64 | (inputs, outputs) u64 per layer
//         | E (n*d f64, row-major) | w (n f64) | b f64 | per layer W, bias
//   VOCB  vocabulary (optional)
//   FREQ  n u64 feature frequencies of the training split (optional)
//   MASK  padding u8 | count u64 | (row u64, col u32) per coordinate (optional)
//   CBOK  m, d u64 | fingerprint u32 | m*d f64 (optional)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "shapprune/container.hpp"
#include "shapprune/data.hpp"
#include "shapprune/imputation.hpp"
#include "shapprune/model.hpp"

namespace shapprune {

inline constexpr std::uint32_t kModelSection = section_tag("MODL");
inline constexpr std::uint32_t kFrequencySection = section_tag("FREQ");
inline constexpr std::uint32_t kMaskSection = section_tag("MASK");
inline constexpr std::uint32_t kCodebookSection = section_tag("CBOK");

struct Checkpoint {
  Model model;
  std::optional<Vocabulary> vocabulary;
  std::vector<std::uint64_t> frequencies;  // empty when not recorded
  std::optional<PruneMask> mask;
  PaddingMode padding = PaddingMode::kZero;
  std::optional<Codebook> codebook;
};

// Backbone parameters without the embedding table; shared with the pruned
// checkpoint layout.
inline void write_backbone_header(ByteWriter& w, const Model& model) {
  w.u8(static_cast<std::uint8_t>(model.backbone));
  w.u64(model.field_count());
  w.u64(model.feature_count());
  w.u64(model.dim);
  for (auto off : model.field_offsets) w.u64(off);
  w.u64(model.mlp.size());
  for (const auto& layer : model.mlp) {
    w.u64(layer.inputs);
    w.u64(layer.outputs);
  }
}

inline Model read_backbone_header(ByteReader& r) {
  Model model;
  const auto tag = r.u8();
  if (tag > 1) throw IoError("unknown backbone tag " + std::to_string(tag));
  model.backbone = static_cast<Backbone>(tag);
  const std::uint64_t m = r.u64();
  const std::uint64_t n = r.u64();
  model.dim = r.u64();
  r.need_elements(m + 1, 8);
  model.field_offsets.resize(m + 1);
  for (auto& off : model.field_offsets) off = r.u64();
  if (model.field_offsets.back() != n) throw IoError("field offsets disagree with n");
  const std::uint64_t layers = r.u64();
  r.need_elements(layers, 16);
  model.mlp.resize(layers);
  for (auto& layer : model.mlp) {
    layer.inputs = r.u64();
    layer.outputs = r.u64();
    r.need_elements(layer.inputs, 8);
    r.need_elements(layer.outputs, 8);
  }
  return model;
}

inline void write_backbone_params(ByteWriter& w, const Model& model) {
  w.f64s(model.linear);
  w.f64(model.bias);
  for (const auto& layer : model.mlp) {
    w.f64s(layer.weight);
    w.f64s(layer.bias);
  }
}

inline void read_backbone_params(ByteReader& r, Model& model) {
  model.linear = r.f64s(model.feature_count());
  model.bias = r.f64();
  for (auto& layer : model.mlp) {
    r.need_elements(layer.inputs * layer.outputs, 8);
    layer.weight = r.f64s(layer.inputs * layer.outputs);
    layer.bias = r.f64s(layer.outputs);
  }
}

inline void write_codebook(ByteWriter& w, const Codebook& cb) {
  w.u64(cb.fields);
  w.u64(cb.dim);
  w.u32(cb.frequency_fingerprint);
  w.f64s(cb.values);
}

inline Codebook read_codebook(ByteReader& r) {
  Codebook cb;
  cb.fields = r.u64();
  cb.dim = r.u64();
  cb.frequency_fingerprint = r.u32();
  r.need_elements(cb.fields, 8);
  r.need_elements(cb.fields * cb.dim, 8);
  cb.values = r.f64s(cb.fields * cb.dim);
  return cb;
}

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  const Model& model = ck.model;
  model.validate();
  ContainerWriter out(FileKind::kModel);
  {
    ByteWriter w;
    write_backbone_header(w, model);
    w.f64s(model.embedding);
    write_backbone_params(w, model);
    out.section(kModelSection, w);
  }
  if (ck.vocabulary) {
    ByteWriter w;
    write_vocabulary(w, *ck.vocabulary);
    out.section(kVocabSection, w);
  }
  if (!ck.frequencies.empty()) {
    ByteWriter w;
    for (auto f : ck.frequencies) w.u64(f);
    out.section(kFrequencySection, w);
  }
  if (ck.mask) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(ck.padding));
    w.u64(ck.mask->size());
    for (std::size_t r = 0; r < ck.mask->rows(); ++r) {
      for (auto c : ck.mask->columns(r)) {
        w.u64(r);
        w.u32(c);
      }
    }
    out.section(kMaskSection, w);
  }
  if (ck.codebook) {
    ByteWriter w;
    write_codebook(w, *ck.codebook);
    out.section(kCodebookSection, w);
  }
  return std::move(out).finish();
}

inline Checkpoint parse_checkpoint(std::vector<std::uint8_t> bytes) {
  auto c = Container::parse(std::move(bytes), FileKind::kModel);
  Checkpoint ck;
  auto r = c.reader(kModelSection);
  ck.model = read_backbone_header(r);
  r.need_elements(ck.model.feature_count() * ck.model.dim, 8);
  ck.model.embedding = r.f64s(ck.model.feature_count() * ck.model.dim);
  read_backbone_params(r, ck.model);
  try {
    ck.model.validate();
  } catch (const DomainError& e) {
    throw IoError(std::string("invalid checkpoint: ") + e.what());
  }
  if (auto vr = c.maybe_reader(kVocabSection)) ck.vocabulary = read_vocabulary(*vr);
  if (auto fr = c.maybe_reader(kFrequencySection)) {
    const std::size_t n = ck.model.feature_count();
    fr->need_elements(n, 8);
    ck.frequencies.resize(n);
    for (auto& f : ck.frequencies) f = fr->u64();
  }
  if (auto mr = c.maybe_reader(kMaskSection)) {
    const auto pad = mr->u8();
    if (pad > 1) throw IoError("unknown padding mode");
    ck.padding = static_cast<PaddingMode>(pad);
    const std::uint64_t count = mr->u64();
    mr->need_elements(count, 12);
    std::vector<std::pair<std::uint64_t, std::uint32_t>> coords(count);
    for (auto& [row, col] : coords) {
      row = mr->u64();
      col = mr->u32();
    }
    ck.mask = PruneMask::from_coordinates(ck.model.feature_count(), ck.model.dim, coords);
  }
  if (auto cr = c.maybe_reader(kCodebookSection)) ck.codebook = read_codebook(*cr);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file_bytes(path)); }

inline void save_model(const Model& model, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.model = model;
  save_checkpoint(ck, path);
}

inline Model load_model(const std::filesystem::path& path) { return load_checkpoint(path).model; }

}  // namespace shapprune
