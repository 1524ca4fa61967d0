#pragma once

// Synthetic CTR data with planted feature importance. Field j's features
// carry latent vectors scaled by decay^j, so early fields matter more;
// within a field, feature frequencies follow a Zipf law. Labels are drawn
// from a ground-truth FM over those latents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/model.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

struct SyntheticConfig {
  std::size_t fields = 5;
  std::size_t features_per_field = 400;
  std::size_t rows = 50000;
  std::size_t latent_dim = 4;
  double zipf_exponent = 1.1;
  double field_decay = 0.6;   // importance ratio between consecutive fields
  double signal = 3.0;        // latent scale of the first field
  double base_logit = -1.0;
  std::uint64_t seed = 0;         // ground-truth model
  std::uint64_t sample_seed = 0;  // rows drawn from it
};

namespace detail {

inline double normal(CounterRng& rng) {
  const double u1 = 1.0 - rng.uniform();  // (0, 1]
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

struct SyntheticData {
  FieldSchema schema;
  RawRows rows;
};

inline SyntheticData make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.fields == 0 || cfg.features_per_field == 0 || cfg.rows == 0 || cfg.latent_dim == 0) {
    throw DomainError("synthetic generator needs positive sizes");
  }
  const std::size_t m = cfg.fields;
  const std::size_t f = cfg.features_per_field;
  const std::size_t k = cfg.latent_dim;
  auto rng = CounterRng::keyed(cfg.seed, 0x5e7);

  SyntheticData out;
  for (std::size_t j = 0; j < m; ++j) {
    out.schema.names.push_back("field" + std::to_string(j));
    out.schema.kinds.push_back(FieldKind::kCategorical);
  }

  // Ground truth per (field, feature): linear weight and latent vector.
  std::vector<double> weight(m * f), latent(m * f * k);
  for (std::size_t j = 0; j < m; ++j) {
    const double scale = cfg.signal * std::pow(cfg.field_decay, static_cast<double>(j));
    for (std::size_t i = 0; i < f; ++i) {
      weight[j * f + i] = 0.5 * scale * detail::normal(rng);
      for (std::size_t c = 0; c < k; ++c) {
        latent[(j * f + i) * k + c] = scale * detail::normal(rng) / std::sqrt(static_cast<double>(k));
      }
    }
  }

  std::vector<double> cdf(f);
  double acc = 0.0;
  for (std::size_t r = 0; r < f; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);
    cdf[r] = acc;
  }
  for (auto& x : cdf) x /= acc;

  rng = CounterRng::keyed(cfg.seed, 0x5e8, cfg.sample_seed);
  out.rows.reserve(cfg.rows);
  std::vector<std::size_t> active(m);
  std::vector<double> sums(k);
  for (std::size_t row = 0; row < cfg.rows; ++row) {
    for (std::size_t j = 0; j < m; ++j) {
      const double u = rng.uniform();
      active[j] = std::min<std::size_t>(
          static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()), f - 1);
    }
    double z = cfg.base_logit;
    std::fill(sums.begin(), sums.end(), 0.0);
    double squares = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t idx = j * f + active[j];
      z += weight[idx];
      for (std::size_t c = 0; c < k; ++c) {
        const double v = latent[idx * k + c];
        sums[c] += v;
        squares += v * v;
      }
    }
    double pair = -squares;
    for (double s : sums) pair += s * s;
    z += 0.5 * pair;
    const std::uint8_t label = rng.uniform() < sigmoid(z) ? 1 : 0;

    std::vector<std::string> cols;
    cols.reserve(m + 1);
    cols.push_back(label ? "1" : "0");
    for (std::size_t j = 0; j < m; ++j) cols.push_back("f" + std::to_string(j) + "_" + std::to_string(active[j]));
    out.rows.push_back(std::move(cols));
  }
  return out;
}

}  // namespace shapprune
