#pragma once

// Per-parameter importance scores for the embedding table.
//
// The Shapley estimator works on the field-level game u: a player (j, c) is
// column c of whichever embedding row field j activates in the instance.
// For one instance the Shapley value of (j, c) in u equals that of the
// corresponding parameter (ids[j], c) in the per-parameter game, so each
// permutation walk needs m*d + 1 forward passes instead of n*d + 1.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shapprune/container.hpp"
#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/model.hpp"
#include "shapprune/parallel.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

enum class AttributionMethod : std::uint8_t {
  kShapley = 0,
  kMagnitude = 1,
  kTaylor = 2,
  kExactShapley = 3,
  kRandom = 4,
};

inline std::string_view to_string(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::kShapley: return "shapley";
    case AttributionMethod::kMagnitude: return "magnitude";
    case AttributionMethod::kTaylor: return "taylor";
    case AttributionMethod::kExactShapley: return "exact";
    case AttributionMethod::kRandom: return "random";
  }
  return "unknown";
}

inline AttributionMethod parse_method(std::string_view s) {
  for (auto m : {AttributionMethod::kShapley, AttributionMethod::kMagnitude, AttributionMethod::kTaylor,
                 AttributionMethod::kExactShapley, AttributionMethod::kRandom}) {
    if (s == to_string(m)) return m;
  }
  throw DomainError("unknown attribution method '" + std::string(s) + "'");
}

// One score per embedding parameter, shaped like E.
struct AttributionScores {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // rows x dim, row-major
  AttributionMethod method = AttributionMethod::kShapley;
  std::uint64_t seed = 0;
  std::uint64_t passes = 0;
  std::uint64_t forward_passes = 0;
  std::uint32_t dataset_fingerprint = 0;

  double at(std::size_t row, std::size_t c) const { return values[row * dim + c]; }
  double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }
};

// Removed flags of the field-level players for one permutation walk.
class RemovalState {
 public:
  RemovalState(std::size_t fields, std::size_t dim) : dim_(dim), removed_(fields * dim, 0) {}

  void remove(std::size_t field, std::size_t c) { removed_[field * dim_ + c] = 1; }
  bool removed(std::size_t field, std::size_t c) const { return removed_[field * dim_ + c] != 0; }
  void clear() { std::fill(removed_.begin(), removed_.end(), 0); }
  void fill() { std::fill(removed_.begin(), removed_.end(), 1); }
  std::size_t players() const { return removed_.size(); }
  std::span<const std::uint8_t> flags() const { return removed_; }

 private:
  std::size_t dim_;
  std::vector<std::uint8_t> removed_;
};

inline double instance_loss(const Model& model, const InstanceView& inst, Workspace& ws) {
  auto emb = embed_lookup(model, inst.ids, ws);
  return log_loss(sigmoid(logit_from_embeddings(model, inst.ids, emb, ws)), inst.label);
}

// u(S | x, y): loss with the removed players zeroed, minus the full loss.
inline double local_value_u(const Model& model, const InstanceView& inst, const RemovalState& removal,
                            double base_loss, Workspace& ws) {
  auto emb = embed_lookup(model, inst.ids, ws);
  const auto flags = removal.flags();
  for (std::size_t k = 0; k < flags.size(); ++k) {
    if (flags[k]) emb[k] = 0.0;
  }
  return log_loss(sigmoid(logit_from_embeddings(model, inst.ids, emb, ws)), inst.label) - base_loss;
}

inline double local_value_u(const Model& model, const InstanceView& inst, const RemovalState& removal,
                            double base_loss) {
  Workspace ws;
  return local_value_u(model, inst, removal, base_loss, ws);
}

struct ShapleyOptions {
  std::size_t passes = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

namespace detail {

// Fixed partition count: accumulation order is the same for any number of
// worker threads.
inline constexpr std::size_t kPartitions = 16;

inline AttributionScores empty_scores(const Model& model, AttributionMethod method) {
  AttributionScores s;
  s.rows = model.feature_count();
  s.dim = model.dim;
  s.values.assign(s.rows * s.dim, 0.0);
  s.method = method;
  return s;
}

inline void check_compatible(const Model& model, const Dataset& data) {
  if (data.empty()) throw DomainError("empty dataset");
  if (data.offsets() != model.field_offsets) throw DomainError("dataset fields do not match the model");
}

}  // namespace detail

// Permutation-sampling estimator on the field-level game. Each visit of an
// instance draws a fresh uniform order of the m*d players from a stream
// keyed by (seed, pass, instance); marginals are credited to the
// corresponding parameters and the totals divided by |D| * passes.
inline AttributionScores estimate_shapley(const Model& model, const Dataset& data, const ShapleyOptions& opt) {
  detail::check_compatible(model, data);
  if (opt.passes == 0) throw DomainError("passes must be at least 1");
  const std::size_t m = model.field_count();
  const std::size_t d = model.dim;
  const std::size_t players = m * d;
  const std::size_t parts = std::min(detail::kPartitions, data.size());

  std::vector<std::vector<double>> accum(parts);
  std::vector<std::uint64_t> forwards(parts, 0);
  for_each_chunk(parts, opt.threads, [&](std::size_t part) {
    auto& acc = accum[part];
    acc.assign(model.feature_count() * d, 0.0);
    const std::size_t begin = data.size() * part / parts;
    const std::size_t end = data.size() * (part + 1) / parts;
    Workspace ws;
    std::vector<double> emb(players);
    std::vector<std::uint32_t> order(players);
    std::uint64_t count = 0;
    for (std::size_t pass = 0; pass < opt.passes; ++pass) {
      for (std::size_t k = begin; k < end; ++k) {
        const auto inst = data[k];
        auto looked_up = embed_lookup(model, inst.ids, ws);
        std::copy(looked_up.begin(), looked_up.end(), emb.begin());
        const double base = log_loss(sigmoid(logit_from_embeddings(model, inst.ids, emb, ws)), inst.label);
        ++count;
        std::iota(order.begin(), order.end(), 0u);
        auto rng = CounterRng::keyed(opt.seed, pass, k);
        shuffle(std::span(order), rng);
        double prev = 0.0;
        for (std::uint32_t player : order) {
          emb[player] = 0.0;
          const double next =
              log_loss(sigmoid(logit_from_embeddings(model, inst.ids, emb, ws)), inst.label) - base;
          ++count;
          const std::size_t j = player / d;
          const std::size_t c = player % d;
          acc[static_cast<std::size_t>(inst.ids[j]) * d + c] += next - prev;
          prev = next;
        }
      }
    }
    forwards[part] = count;
  });

  auto scores = detail::empty_scores(model, AttributionMethod::kShapley);
  for (std::size_t part = 0; part < parts; ++part) {
    for (std::size_t q = 0; q < scores.values.size(); ++q) scores.values[q] += accum[part][q];
    scores.forward_passes += forwards[part];
  }
  const double norm = static_cast<double>(data.size()) * static_cast<double>(opt.passes);
  for (auto& v : scores.values) v /= norm;
  scores.seed = opt.seed;
  scores.passes = opt.passes;
  scores.dataset_fingerprint = dataset_fingerprint(data);
  return scores;
}

// Largest m*d the exact oracle will enumerate.
inline constexpr std::size_t kMaxExactPlayers = 22;

// Exact local Shapley values of the field-level game by enumerating all
// 2^(m*d) removal subsets. Returns an m x d matrix (row-major).
inline std::vector<double> exact_shapley_local(const Model& model, const InstanceView& inst,
                                               std::uint64_t* forward_passes = nullptr) {
  const std::size_t m = inst.ids.size();
  const std::size_t d = model.dim;
  const std::size_t players = m * d;
  if (players > kMaxExactPlayers) throw DomainError("instance too large for exact oracle");

  Workspace ws;
  auto looked_up = embed_lookup(model, inst.ids, ws);
  const std::vector<double> full(looked_up.begin(), looked_up.end());
  const double base = log_loss(sigmoid(logit_from_embeddings(model, inst.ids, full, ws)), inst.label);

  const std::size_t subsets = std::size_t{1} << players;
  std::vector<double> value(subsets);
  std::vector<double> emb(players);
  for (std::size_t s = 0; s < subsets; ++s) {
    for (std::size_t p = 0; p < players; ++p) emb[p] = (s >> p) & 1u ? 0.0 : full[p];
    value[s] = log_loss(sigmoid(logit_from_embeddings(model, inst.ids, emb, ws)), inst.label) - base;
  }
  if (forward_passes != nullptr) *forward_passes += subsets + 1;

  // weight[k] = k! (M - k - 1)! / M!
  std::vector<double> weight(players);
  weight[0] = 1.0 / static_cast<double>(players);
  for (std::size_t k = 0; k + 1 < players; ++k) {
    weight[k + 1] = weight[k] * static_cast<double>(k + 1) / static_cast<double>(players - k - 1);
  }

  std::vector<double> phi(players, 0.0);
  for (std::size_t s = 0; s < subsets; ++s) {
    const auto size = static_cast<std::size_t>(std::popcount(s));
    for (std::size_t p = 0; p < players; ++p) {
      if ((s >> p) & 1u) continue;
      phi[p] += weight[size] * (value[s | (std::size_t{1} << p)] - value[s]);
    }
  }
  return phi;
}

// Mean over the dataset of the exact local values, each scattered onto the
// parameters of the instance's active features. Target of estimate_shapley.
inline AttributionScores exact_shapley_global(const Model& model, const Dataset& data) {
  detail::check_compatible(model, data);
  if (model.field_count() * model.dim > kMaxExactPlayers) throw DomainError("instance too large for exact oracle");
  auto scores = detail::empty_scores(model, AttributionMethod::kExactShapley);
  const std::size_t d = model.dim;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto inst = data[k];
    const auto local = exact_shapley_local(model, inst, &scores.forward_passes);
    for (std::size_t j = 0; j < inst.ids.size(); ++j) {
      for (std::size_t c = 0; c < d; ++c) scores.values[inst.ids[j] * d + c] += local[j * d + c];
    }
  }
  for (auto& v : scores.values) v /= static_cast<double>(data.size());
  scores.passes = 1;
  scores.dataset_fingerprint = dataset_fingerprint(data);
  return scores;
}

inline AttributionScores score_magnitude(const Model& model) {
  auto scores = detail::empty_scores(model, AttributionMethod::kMagnitude);
  for (std::size_t q = 0; q < scores.values.size(); ++q) scores.values[q] = std::abs(model.embedding[q]);
  return scores;
}

// |E[i,c] * mean dL/dE[i,c]|: first-order loss change from zeroing the
// parameter.
inline AttributionScores score_taylor(const Model& model, const Dataset& data) {
  detail::check_compatible(model, data);
  auto scores = detail::empty_scores(model, AttributionMethod::kTaylor);
  const std::size_t d = model.dim;
  Workspace ws;
  InstanceGradient grad;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto inst = data[k];
    backward(model, inst, ws, grad);
    ++scores.forward_passes;
    for (std::size_t j = 0; j < inst.ids.size(); ++j) {
      for (std::size_t c = 0; c < d; ++c) scores.values[inst.ids[j] * d + c] += grad.embedding[j * d + c];
    }
  }
  const double norm = static_cast<double>(data.size());
  for (std::size_t q = 0; q < scores.values.size(); ++q) {
    scores.values[q] = std::abs(model.embedding[q] * (scores.values[q] / norm));
  }
  scores.dataset_fingerprint = dataset_fingerprint(data);
  return scores;
}

// Uniform random scores; the uninformed pruning baseline.
inline AttributionScores score_random(const Model& model, std::uint64_t seed) {
  auto scores = detail::empty_scores(model, AttributionMethod::kRandom);
  auto rng = CounterRng::keyed(seed, 0x7a4d);
  for (auto& v : scores.values) v = rng.uniform();
  scores.seed = seed;
  return scores;
}

inline constexpr std::uint32_t kScoresSection = section_tag("SCOR");
inline constexpr std::uint32_t kScoresMetaSection = section_tag("META");

inline std::vector<std::uint8_t> serialize_scores(const AttributionScores& s) {
  ContainerWriter out(FileKind::kScores);
  ByteWriter w;
  w.u64(s.rows);
  w.u64(s.dim);
  w.f64s(s.values);
  out.section(kScoresSection, w);
  ByteWriter meta;
  meta.u8(static_cast<std::uint8_t>(s.method));
  meta.u64(s.seed);
  meta.u64(s.passes);
  meta.u64(s.forward_passes);
  meta.u32(s.dataset_fingerprint);
  out.section(kScoresMetaSection, meta);
  return std::move(out).finish();
}

inline AttributionScores parse_scores(std::vector<std::uint8_t> bytes) {
  auto c = Container::parse(std::move(bytes), FileKind::kScores);
  AttributionScores s;
  auto r = c.reader(kScoresSection);
  s.rows = r.u64();
  s.dim = r.u64();
  r.need_elements(s.rows, 8);
  r.need_elements(s.rows * s.dim, 8);
  s.values = r.f64s(s.rows * s.dim);
  auto meta = c.reader(kScoresMetaSection);
  const auto method = meta.u8();
  if (method > static_cast<std::uint8_t>(AttributionMethod::kRandom)) throw IoError("unknown attribution method tag");
  s.method = static_cast<AttributionMethod>(method);
  s.seed = meta.u64();
  s.passes = meta.u64();
  s.forward_passes = meta.u64();
  s.dataset_fingerprint = meta.u32();
  return s;
}

inline void save_scores(const AttributionScores& s, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_scores(s));
}

inline AttributionScores load_scores(const std::filesystem::path& path) { return parse_scores(read_file_bytes(path)); }

}  // namespace shapprune
