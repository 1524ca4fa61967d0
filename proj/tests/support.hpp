#pragma once

// Fixtures and independent oracles shared by the unit and acceptance suites.
// Nothing here calls the estimator or the exact oracle under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "shapprune/shapprune.hpp"

namespace shapprune::testing {

// 40-instance toy problem: three fields with 2, 2 and 3 features (n = 7),
// d = 3, DeepFM, trained to fit a planted rule.
struct Toy {
  Dataset data;
  Model model;
};

inline Dataset random_dataset(const std::vector<std::uint64_t>& offsets, std::size_t rows, std::uint64_t seed,
                              const std::function<double(std::span<const std::uint32_t>)>& logit) {
  auto rng = CounterRng::keyed(seed, 0x70);
  const std::size_t m = offsets.size() - 1;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> row(m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = static_cast<std::uint32_t>(offsets[j] + rng.below(offsets[j + 1] - offsets[j]));
    }
    labels.push_back(rng.uniform() < sigmoid(logit(row)) ? 1 : 0);
    ids.insert(ids.end(), row.begin(), row.end());
  }
  return Dataset(offsets, std::move(labels), std::move(ids));
}

inline Toy make_toy(std::uint64_t seed = 3) {
  const std::vector<std::uint64_t> offsets{0, 2, 4, 7};
  // Planted rule: feature-level effects plus one field interaction.
  const std::vector<double> effect{1.5, -1.0, 0.5, -0.5, 2.0, -2.0, 0.0};
  auto data = random_dataset(offsets, 40, seed, [&](std::span<const std::uint32_t> ids) {
    double z = 0.0;
    for (auto id : ids) z += effect[id];
    if (ids[0] == 0 && ids[2] == 4) z += 1.5;
    return z;
  });
  TrainConfig cfg;
  cfg.backbone = Backbone::kDeepFm;
  cfg.dim = 3;
  cfg.epochs = 200;
  cfg.lr = 1e-2;
  cfg.batch_size = 8;
  cfg.seed = seed;
  Model model = train(data, cfg);
  return {std::move(data), std::move(model)};
}

// Random untrained model; scale sets the embedding and weight magnitude.
inline Model random_model(Backbone backbone, std::vector<std::uint64_t> offsets, std::size_t dim,
                          std::uint64_t seed, double scale = 0.5, std::vector<std::size_t> hidden = {4, 3}) {
  ModelShape shape{backbone, std::move(offsets), dim, std::move(hidden)};
  Model model = init_model(shape, seed);
  auto rng = CounterRng::keyed(seed, 0xabc);
  for (auto& e : model.embedding) e = scale * (2.0 * rng.uniform() - 1.0);
  for (auto& w : model.linear) w = scale * (2.0 * rng.uniform() - 1.0);
  model.bias = scale * (2.0 * rng.uniform() - 1.0);
  for (auto& layer : model.mlp) {
    for (auto& b : layer.bias) b = 0.1 * (2.0 * rng.uniform() - 1.0);
  }
  return model;
}

// Loss of the dense model with the given flat E coordinates set to zero,
// computed by editing a copy of the table.
inline double loss_with_zeroed(const Model& model, const InstanceView& inst, std::span<const std::size_t> coords) {
  Model copy = model;
  for (auto q : coords) copy.embedding[q] = 0.0;
  return log_loss(forward(copy, inst), inst.label);
}

// Shapley values by averaging marginals over every ordering of the players.
inline std::vector<double> shapley_by_permutations(std::size_t players,
                                                   const std::function<double(std::uint64_t)>& value) {
  std::vector<std::size_t> order(players);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> phi(players, 0.0);
  double count = 0.0;
  do {
    std::uint64_t set = 0;
    double prev = value(0);
    for (auto p : order) {
      set |= std::uint64_t{1} << p;
      const double next = value(set);
      phi[p] += next - prev;
      prev = next;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& x : phi) x /= count;
  return phi;
}

// Exact Shapley values of the per-parameter game v on one instance: every
// entry of E is a player. Subset enumeration with factorial weights
// computed via lgamma. Practical for n*d <= 14.
inline std::vector<double> exact_parameter_game(const Model& model, const InstanceView& inst) {
  const std::size_t players = model.embedding_size();
  const double base = log_loss(forward(model, inst), inst.label);
  const std::size_t subsets = std::size_t{1} << players;
  std::vector<double> value(subsets);
  std::vector<std::size_t> coords;
  for (std::size_t s = 0; s < subsets; ++s) {
    coords.clear();
    for (std::size_t p = 0; p < players; ++p) {
      if ((s >> p) & 1u) coords.push_back(p);
    }
    value[s] = loss_with_zeroed(model, inst, coords) - base;
  }
  const double total = static_cast<double>(players);
  std::vector<double> phi(players, 0.0);
  for (std::size_t s = 0; s < subsets; ++s) {
    const double k = static_cast<double>(std::popcount(s));
    const double w = std::exp(std::lgamma(k + 1.0) + std::lgamma(total - k) - std::lgamma(total + 1.0));
    for (std::size_t p = 0; p < players; ++p) {
      if ((s >> p) & 1u) continue;
      phi[p] += w * (value[s | (std::size_t{1} << p)] - value[s]);
    }
  }
  return phi;
}

inline double mean_abs_diff(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs(a[k] - b[k]);
  return acc / static_cast<double>(a.size());
}

// AUC as the fraction of (positive, negative) pairs ordered correctly, ties
// counting one half.
inline double auc_by_pairs(std::span<const double> preds, std::span<const std::uint8_t> labels) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t a = 0; a < preds.size(); ++a) {
    if (!labels[a]) continue;
    for (std::size_t b = 0; b < preds.size(); ++b) {
      if (labels[b]) continue;
      pairs += 1.0;
      if (preds[a] > preds[b]) good += 1.0;
      if (preds[a] == preds[b]) good += 0.5;
    }
  }
  return good / pairs;
}

// Minimizes a 1-D unimodal function on [lo, hi] by golden-section search.
inline double golden_section(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12) {
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// Coordinate-wise numeric minimizer of sum_{i in F_j} p_i ||E[i,:] - C[j,:]||^2.
inline std::vector<double> minimize_field_quadratic(const Model& model, std::span<const double> freq) {
  const std::size_t m = model.field_count();
  const std::size_t d = model.dim;
  std::vector<double> out(m * d);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < d; ++c) {
      double lo = 1e300, hi = -1e300;
      for (auto i = model.field_offsets[j]; i < model.field_offsets[j + 1]; ++i) {
        lo = std::min(lo, model.embedding[i * d + c]);
        hi = std::max(hi, model.embedding[i * d + c]);
      }
      auto objective = [&](double x) {
        double acc = 0.0;
        for (auto i = model.field_offsets[j]; i < model.field_offsets[j + 1]; ++i) {
          const double diff = model.embedding[i * d + c] - x;
          acc += freq[i] * diff * diff;
        }
        return acc;
      };
      out[j * d + c] = golden_section(objective, lo - 1.0, hi + 1.0);
    }
  }
  return out;
}

inline double central_difference(const std::function<double()>& loss, double& param, double h = 1e-5) {
  const double saved = param;
  param = saved + h;
  const double up = loss();
  param = saved - h;
  const double down = loss();
  param = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace shapprune::testing
