#pragma once

// Field-aware codebook: each field's frequency-weighted mean embedding row,
// substituted for pruned coordinates.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/imputation.hpp"
#include "shapprune/model.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

// C[j,:] = sum_{i in F_j} p_i E[i,:] / sum_{i in F_j} p_i
inline Codebook compute_codebook(const Model& model, std::span<const double> frequencies) {
  const std::size_t m = model.field_count();
  const std::size_t d = model.dim;
  if (frequencies.size() != model.feature_count()) throw DomainError("frequency vector does not match the model");
  Codebook cb;
  cb.fields = m;
  cb.dim = d;
  cb.values.assign(m * d, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double total = 0.0;
    for (std::size_t i = model.field_offsets[j]; i < model.field_offsets[j + 1]; ++i) {
      if (frequencies[i] < 0.0) throw DomainError("negative feature frequency");
      total += frequencies[i];
    }
    if (!(total > 0.0)) throw DomainError("field " + std::to_string(j) + " has zero total frequency");
    for (std::size_t i = model.field_offsets[j]; i < model.field_offsets[j + 1]; ++i) {
      if (frequencies[i] == 0.0) continue;
      const double weight = frequencies[i] / total;
      for (std::size_t c = 0; c < d; ++c) cb.values[j * d + c] += weight * model.embedding[i * d + c];
    }
  }
  return cb;
}

inline Codebook compute_codebook(const Model& model, const Dataset& data) {
  if (data.offsets() != model.field_offsets) throw DomainError("dataset fields do not match the model");
  const auto& counts = data.frequencies();
  std::vector<double> freq(counts.begin(), counts.end());
  auto cb = compute_codebook(model, freq);
  ByteWriter w;
  for (auto f : counts) w.u64(f);
  cb.frequency_fingerprint = crc32_of(w.buffer());
  return cb;
}

// Monte Carlo estimate of E_{x ~ D, |Q| = B} || E^T x - E_{Q,C}^T x ||^2
// with Q uniform among the n*d coordinates and B = round(fraction * n*d).
// Only the m*d coordinates of x's active rows matter, and their joint
// membership in Q is drawn exactly by sequential hypergeometric sampling.
// Test oracle for the closed form; the same seed gives common random
// numbers across different codebooks.
inline double codebook_objective(const Model& model, const Dataset& data, const Codebook& cb,
                                 double budget_fraction, std::size_t samples, std::uint64_t seed) {
  if (!(budget_fraction > 0.0 && budget_fraction < 1.0)) throw DomainError("budget fraction must lie in (0, 1)");
  if (data.empty()) throw DomainError("empty dataset");
  const std::size_t m = model.field_count();
  const std::size_t d = model.dim;
  const double total = static_cast<double>(model.embedding_size());
  const double budget = std::nearbyint(budget_fraction * total);
  auto rng = CounterRng::keyed(seed, 0xc0deb00c);
  std::vector<double> diff(d);
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto inst = data[static_cast<std::size_t>(rng.below(data.size()))];
    std::fill(diff.begin(), diff.end(), 0.0);
    double chosen = 0.0;
    double seen = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        const bool pruned = rng.uniform() * (total - seen) < budget - chosen;
        seen += 1.0;
        if (!pruned) continue;
        chosen += 1.0;
        diff[c] += model.embedding[inst.ids[j] * d + c] - cb.at(j, c);
      }
    }
    double sq = 0.0;
    for (double x : diff) sq += x * x;
    acc += sq;
  }
  return acc / static_cast<double>(samples);
}

}  // namespace shapprune
