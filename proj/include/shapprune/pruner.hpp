#pragma once

// Single-shot pruning of the embedding table to a parameter budget, the
// CSR pruned checkpoint and AUC/log-loss evaluation.
//
// Pruned checkpoint sections:
//   BKBN  backbone header + w, b, MLP (same layout as MODL minus E)
//   CSRE  n, d, nnz u64 | row ptr (n+1) u64 | col idx nnz u32 | values nnz f64
//   PADM  padding mode u8 | sparsity f64
//   CBOK, VOCB, FREQ as in dense checkpoints (optional)

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapprune/attribution.hpp"
#include "shapprune/checkpoint.hpp"
#include "shapprune/container.hpp"
#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/imputation.hpp"
#include "shapprune/model.hpp"
#include "shapprune/parallel.hpp"

namespace shapprune {

// Kept embedding entries in compressed sparse row form.
struct CsrTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<std::uint64_t> row_ptr{0};
  std::vector<std::uint32_t> cols;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  friend bool operator==(const CsrTable&, const CsrTable&) = default;
};

struct PrunedModel {
  Model backbone;  // embedding left empty; dim and offsets still set
  CsrTable table;
  PaddingMode padding = PaddingMode::kZero;
  std::optional<Codebook> codebook;
  double sparsity = 0.0;
  std::optional<Vocabulary> vocabulary;
  std::vector<std::uint64_t> frequencies;

  std::size_t kept() const { return table.nnz(); }
  std::size_t pruned() const { return table.rows * table.dim - table.nnz(); }

  // Complement of the stored coordinates.
  PruneMask mask() const {
    std::vector<std::pair<std::uint64_t, std::uint32_t>> coords;
    coords.reserve(pruned());
    for (std::size_t r = 0; r < table.rows; ++r) {
      auto it = table.cols.begin() + static_cast<std::ptrdiff_t>(table.row_ptr[r]);
      const auto end = table.cols.begin() + static_cast<std::ptrdiff_t>(table.row_ptr[r + 1]);
      for (std::uint32_t c = 0; c < table.dim; ++c) {
        if (it != end && *it == c) {
          ++it;
        } else {
          coords.emplace_back(r, c);
        }
      }
    }
    return PruneMask::from_coordinates(table.rows, table.dim, coords);
  }

  double padding_value(std::size_t field, std::size_t c) const {
    return padding == PaddingMode::kZero ? 0.0 : codebook->at(field, c);
  }
};

// B = round(t * total), ties to even.
inline std::size_t prune_budget(double sparsity, std::size_t total) {
  return static_cast<std::size_t>(std::nearbyint(sparsity * static_cast<double>(total)));
}

// Coordinates of E in pruning order: smallest score first; ties go to the
// less frequent feature, then the larger row, then the larger column.
inline std::vector<std::uint64_t> pruning_order(const AttributionScores& scores,
                                                std::span<const std::uint64_t> frequencies) {
  const std::size_t total = scores.values.size();
  if (!frequencies.empty() && frequencies.size() != scores.rows) {
    throw DomainError("frequency vector does not match the score rows");
  }
  for (double v : scores.values) {
    if (!std::isfinite(v)) throw DomainError("scores contain non-finite values");
  }
  std::vector<std::uint64_t> order(total);
  std::iota(order.begin(), order.end(), std::uint64_t{0});
  const std::size_t d = scores.dim;
  auto freq = [&](std::uint64_t q) -> std::uint64_t { return frequencies.empty() ? 0 : frequencies[q / d]; };
  std::sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
    if (scores.values[a] != scores.values[b]) return scores.values[a] < scores.values[b];
    if (freq(a) != freq(b)) return freq(a) < freq(b);
    return a > b;  // row-major index: larger row, then larger column
  });
  return order;
}

inline PrunedModel prune(const Model& model, const AttributionScores& scores, double sparsity, PaddingMode padding,
                         const Codebook* codebook, std::span<const std::uint64_t> frequencies = {}) {
  model.validate();
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw DomainError("sparsity must lie in [0, 1]");
  if (scores.rows != model.feature_count() || scores.dim != model.dim ||
      scores.values.size() != model.embedding_size()) {
    throw DomainError("score shape does not match the embedding table");
  }
  if (padding == PaddingMode::kCodebook && codebook == nullptr) {
    throw DomainError("codebook padding requires a codebook");
  }
  if (codebook != nullptr && (codebook->fields != model.field_count() || codebook->dim != model.dim)) {
    throw DomainError("codebook shape does not match the model");
  }

  const std::size_t n = model.feature_count();
  const std::size_t d = model.dim;
  const std::size_t budget = prune_budget(sparsity, n * d);
  std::vector<std::uint8_t> removed(n * d, 0);
  if (budget > 0) {
    const auto order = pruning_order(scores, frequencies);
    for (std::size_t k = 0; k < budget; ++k) removed[order[k]] = 1;
  }

  PrunedModel out;
  out.backbone = model;
  out.backbone.embedding.clear();
  out.padding = padding;
  if (codebook != nullptr) out.codebook = *codebook;
  out.sparsity = sparsity;
  out.frequencies.assign(frequencies.begin(), frequencies.end());
  out.table.rows = n;
  out.table.dim = d;
  out.table.row_ptr.reserve(n + 1);
  out.table.cols.reserve(n * d - budget);
  out.table.values.reserve(n * d - budget);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      if (removed[r * d + c]) continue;
      out.table.cols.push_back(static_cast<std::uint32_t>(c));
      out.table.values.push_back(model.embedding[r * d + c]);
    }
    out.table.row_ptr.push_back(out.table.cols.size());
  }
  return out;
}

// Looks up the m active rows, filling pruned coordinates with padding.
inline std::span<double> embed_lookup(const PrunedModel& pm, std::span<const std::uint32_t> ids, Workspace& ws) {
  const Model& bb = pm.backbone;
  detail::check_ids(bb, ids);
  const std::size_t d = bb.dim;
  ws.emb.resize(ids.size() * d);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    double* out = ws.emb.data() + j * d;
    for (std::size_t c = 0; c < d; ++c) out[c] = pm.padding_value(j, c);
    const std::size_t row = ids[j];
    for (auto k = pm.table.row_ptr[row]; k < pm.table.row_ptr[row + 1]; ++k) out[pm.table.cols[k]] = pm.table.values[k];
  }
  return ws.emb;
}

inline double forward(const PrunedModel& pm, std::span<const std::uint32_t> ids, Workspace& ws) {
  auto emb = embed_lookup(pm, ids, ws);
  return clamp_prediction(sigmoid(logit_from_embeddings(pm.backbone, ids, emb, ws)));
}

// Dense model whose table is the imputed pruned table.
inline Model densify(const PrunedModel& pm) {
  Model model = pm.backbone;
  const std::size_t d = model.dim;
  model.embedding.assign(pm.table.rows * d, 0.0);
  for (std::size_t r = 0; r < pm.table.rows; ++r) {
    const std::size_t field = model.field_of(r);
    for (std::size_t c = 0; c < d; ++c) model.embedding[r * d + c] = pm.padding_value(field, c);
    for (auto k = pm.table.row_ptr[r]; k < pm.table.row_ptr[r + 1]; ++k) {
      model.embedding[r * d + pm.table.cols[k]] = pm.table.values[k];
    }
  }
  return model;
}

// Builds a pruned model that keeps exactly the unmasked coordinates of a
// dense model (used after mask-frozen fine-tuning).
inline PrunedModel repack(const Model& model, const PruneMask& mask, PaddingMode padding,
                          std::optional<Codebook> codebook, double sparsity) {
  PrunedModel out;
  out.backbone = model;
  out.backbone.embedding.clear();
  out.padding = padding;
  out.codebook = std::move(codebook);
  out.sparsity = sparsity;
  const std::size_t d = model.dim;
  out.table.rows = model.feature_count();
  out.table.dim = d;
  for (std::size_t r = 0; r < out.table.rows; ++r) {
    auto pruned = mask.columns(r);
    auto it = pruned.begin();
    for (std::uint32_t c = 0; c < d; ++c) {
      if (it != pruned.end() && *it == c) {
        ++it;
        continue;
      }
      out.table.cols.push_back(c);
      out.table.values.push_back(model.embedding[r * d + c]);
    }
    out.table.row_ptr.push_back(out.table.cols.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::optional<double> auc;  // empty when only one class is present
  double logloss = 0.0;
  std::size_t count = 0;
  std::size_t storage_bytes = 0;
};

// Rank-statistic AUC with average ranks for tied predictions.
inline std::optional<double> auc_score(std::span<const double> predictions, std::span<const std::uint8_t> labels) {
  const std::size_t n = predictions.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });
  double positives = 0.0;
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && predictions[order[j]] == predictions[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        positives += 1.0;
        rank_sum += avg_rank;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) return std::nullopt;
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

using Predictor = std::function<double(std::span<const std::uint32_t>, Workspace&)>;

inline EvalReport evaluate_with(const Predictor& predict, const Dataset& data, std::size_t threads = 1) {
  if (data.empty()) throw DomainError("empty dataset");
  std::vector<double> preds(data.size());
  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = (data.size() + kChunk - 1) / kChunk;
  for_each_chunk(chunks, threads, [&](std::size_t chunk) {
    Workspace ws;
    const std::size_t end = std::min(data.size(), (chunk + 1) * kChunk);
    for (std::size_t k = chunk * kChunk; k < end; ++k) preds[k] = predict(data[k].ids, ws);
  });
  EvalReport report;
  report.count = data.size();
  double loss = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) loss += log_loss(preds[k], data.labels()[k]);
  report.logloss = loss / static_cast<double>(data.size());
  report.auc = auc_score(preds, data.labels());
  return report;
}

inline EvalReport evaluate(const Model& model, const Dataset& data, std::size_t threads = 1,
                           const Imputation* imputation = nullptr) {
  model.validate();
  return evaluate_with(
      [&](std::span<const std::uint32_t> ids, Workspace& ws) { return forward(model, ids, ws, imputation); }, data,
      threads);
}

inline EvalReport evaluate(const PrunedModel& pm, const Dataset& data, std::size_t threads = 1) {
  return evaluate_with([&](std::span<const std::uint32_t> ids, Workspace& ws) { return forward(pm, ids, ws); },
                       data, threads);
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::uint32_t kBackboneSection = section_tag("BKBN");
inline constexpr std::uint32_t kCsrSection = section_tag("CSRE");
inline constexpr std::uint32_t kPaddingSection = section_tag("PADM");

inline std::vector<std::uint8_t> serialize_pruned(const PrunedModel& pm) {
  ContainerWriter out(FileKind::kPruned);
  {
    ByteWriter w;
    write_backbone_header(w, pm.backbone);
    write_backbone_params(w, pm.backbone);
    out.section(kBackboneSection, w);
  }
  {
    ByteWriter w;
    w.u64(pm.table.rows);
    w.u64(pm.table.dim);
    w.u64(pm.table.nnz());
    for (auto p : pm.table.row_ptr) w.u64(p);
    for (auto c : pm.table.cols) w.u32(c);
    w.f64s(pm.table.values);
    out.section(kCsrSection, w);
  }
  {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(pm.padding));
    w.f64(pm.sparsity);
    out.section(kPaddingSection, w);
  }
  if (pm.codebook) {
    ByteWriter w;
    write_codebook(w, *pm.codebook);
    out.section(kCodebookSection, w);
  }
  if (pm.vocabulary) {
    ByteWriter w;
    write_vocabulary(w, *pm.vocabulary);
    out.section(kVocabSection, w);
  }
  if (!pm.frequencies.empty()) {
    ByteWriter w;
    for (auto f : pm.frequencies) w.u64(f);
    out.section(kFrequencySection, w);
  }
  return std::move(out).finish();
}

inline PrunedModel parse_pruned(std::vector<std::uint8_t> bytes) {
  auto c = Container::parse(std::move(bytes), FileKind::kPruned);
  PrunedModel pm;
  {
    auto r = c.reader(kBackboneSection);
    pm.backbone = read_backbone_header(r);
    read_backbone_params(r, pm.backbone);
  }
  {
    auto r = c.reader(kCsrSection);
    auto& t = pm.table;
    t.rows = r.u64();
    t.dim = r.u64();
    const std::uint64_t nnz = r.u64();
    if (t.rows != pm.backbone.feature_count() || t.dim != pm.backbone.dim) throw IoError("CSR shape mismatch");
    r.need_elements(t.rows + 1, 8);
    t.row_ptr.resize(t.rows + 1);
    for (auto& p : t.row_ptr) p = r.u64();
    r.need_elements(nnz, 12);
    t.cols.resize(nnz);
    for (auto& col : t.cols) col = r.u32();
    t.values = r.f64s(nnz);
    if (t.row_ptr.front() != 0 || t.row_ptr.back() != nnz) throw IoError("CSR row pointers inconsistent");
    for (std::size_t row = 0; row < t.rows; ++row) {
      if (t.row_ptr[row] > t.row_ptr[row + 1]) throw IoError("CSR row pointers inconsistent");
      for (auto k = t.row_ptr[row]; k < t.row_ptr[row + 1]; ++k) {
        if (t.cols[k] >= t.dim || (k > t.row_ptr[row] && t.cols[k] <= t.cols[k - 1])) {
          throw IoError("CSR column indices must be sorted, unique and in range");
        }
      }
    }
  }
  {
    auto r = c.reader(kPaddingSection);
    const auto pad = r.u8();
    if (pad > 1) throw IoError("unknown padding mode");
    pm.padding = static_cast<PaddingMode>(pad);
    pm.sparsity = r.f64();
  }
  if (auto r = c.maybe_reader(kCodebookSection)) pm.codebook = read_codebook(*r);
  if (pm.padding == PaddingMode::kCodebook && !pm.codebook) throw IoError("codebook padding without codebook section");
  if (auto r = c.maybe_reader(kVocabSection)) pm.vocabulary = read_vocabulary(*r);
  if (auto r = c.maybe_reader(kFrequencySection)) {
    r->need_elements(pm.table.rows, 8);
    pm.frequencies.resize(pm.table.rows);
    for (auto& f : pm.frequencies) f = r->u64();
  }
  return pm;
}

inline void save_pruned(const PrunedModel& pm, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_pruned(pm));
}

inline PrunedModel load_pruned(const std::filesystem::path& path) { return parse_pruned(read_file_bytes(path)); }

inline bool is_pruned_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return bytes.size() >= 9 && Container::peek_kind(bytes) == FileKind::kPruned;
}

// Serialized size of the CSR payload alone.
inline std::size_t csr_section_bytes(const CsrTable& t) {
  return 24 + 8 * t.row_ptr.size() + 4 * t.cols.size() + 8 * t.values.size();
}

// ---------------------------------------------------------------------------
// Sparsity sweep and diagnostics

struct CurvePoint {
  double sparsity = 0.0;
  EvalReport report;
  std::size_t kept = 0;
  std::size_t file_bytes = 0;
};

inline std::vector<CurvePoint> prune_curve(const Model& model, const AttributionScores& scores,
                                           std::span<const double> sparsities, PaddingMode padding,
                                           const Codebook* codebook, const Dataset& data,
                                           std::span<const std::uint64_t> frequencies = {}, std::size_t threads = 1) {
  if (!std::is_sorted(sparsities.begin(), sparsities.end())) throw DomainError("sparsity list must be sorted");
  std::vector<CurvePoint> points;
  for (double t : sparsities) {
    auto pm = prune(model, scores, t, padding, codebook, frequencies);
    CurvePoint p;
    p.sparsity = t;
    p.report = evaluate(pm, data, threads);
    p.kept = pm.kept();
    p.file_bytes = serialize_pruned(pm).size();
    p.report.storage_bytes = p.file_bytes;
    points.push_back(p);
  }
  return points;
}

inline std::string curve_csv(std::span<const CurvePoint> points) {
  // Shortest representation that round-trips.
  auto num = [](double x) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, x).ptr);
  };
  std::string out = "sparsity,auc,logloss,kept_params,file_bytes\n";
  for (const auto& p : points) {
    out += num(p.sparsity) + ',' + (p.report.auc ? num(*p.report.auc) : "nan") + ',' + num(p.report.logloss) + ',' +
           std::to_string(p.kept) + ',' + std::to_string(p.file_bytes) + '\n';
  }
  return out;
}

struct FrequencyBin {
  std::uint64_t min_frequency = 0;
  std::uint64_t max_frequency = 0;
  std::size_t features = 0;
  double mean_kept_dims = 0.0;
};

// Splits features into three equal-count bins by ascending frequency and
// reports the mean number of kept dimensions per feature in each bin.
inline std::vector<FrequencyBin> frequency_bins(const PrunedModel& pm, std::span<const std::uint64_t> frequencies) {
  const std::size_t n = pm.table.rows;
  if (frequencies.size() != n) throw DomainError("frequency vector does not match the model");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frequencies[a] < frequencies[b]; });
  std::vector<FrequencyBin> bins(3);
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t begin = n * b / 3;
    const std::size_t end = n * (b + 1) / 3;
    auto& bin = bins[b];
    bin.features = end - begin;
    if (bin.features == 0) continue;
    bin.min_frequency = frequencies[order[begin]];
    bin.max_frequency = frequencies[order[end - 1]];
    double kept = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      kept += static_cast<double>(pm.table.row_ptr[order[k] + 1] - pm.table.row_ptr[order[k]]);
    }
    bin.mean_kept_dims = kept / static_cast<double>(bin.features);
  }
  return bins;
}

}  // namespace shapprune
