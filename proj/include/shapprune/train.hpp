#pragma once

// Mini-batch Adam on mean log loss, optionally with a frozen prune mask.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/imputation.hpp"
#include "shapprune/model.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

struct TrainConfig {
  Backbone backbone = Backbone::kFm;
  std::size_t dim = 8;
  std::vector<std::size_t> hidden{16, 16};
  std::size_t epochs = 10;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;

  // Masked coordinates are pinned to their padding value and never updated.
  const PruneMask* mask = nullptr;
  PaddingMode padding = PaddingMode::kZero;
  const Codebook* codebook = nullptr;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean log loss seen during each epoch
};

namespace detail {

class Adam {
 public:
  Adam(const TrainConfig& cfg, std::size_t size) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  // frozen (optional) flags entries that must not move.
  void step(std::span<double> params, std::span<const double> grad, std::span<const std::uint8_t> frozen,
            std::uint64_t t) {
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!frozen.empty() && frozen[k]) continue;
      const double g = grad[k];
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g * g;
      params[k] -= cfg_.lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.adam_eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace detail

// Trains `model` in place. Deterministic given cfg.seed: batches are drawn
// from a per-epoch shuffle and reduced in instance order.
inline TrainHistory fit(Model& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.empty()) throw DomainError("cannot train on an empty dataset");
  if (data.offsets() != model.field_offsets) throw DomainError("dataset fields do not match the model");
  if (cfg.batch_size == 0) throw DomainError("batch size must be positive");
  model.validate();

  const std::size_t n = model.feature_count();
  const std::size_t d = model.dim;
  std::vector<std::uint8_t> frozen;
  if (cfg.mask != nullptr) {
    if (cfg.mask->rows() != n || cfg.mask->dim() != d) throw DomainError("mask shape does not match the model");
    Imputation imp(*cfg.mask, cfg.padding, cfg.codebook, model.field_offsets);
    model.embedding = impute(model.embedding, imp);
    frozen = cfg.mask->dense();
  }

  detail::Adam adam_emb(cfg, n * d), adam_lin(cfg, n), adam_bias(cfg, 1);
  std::vector<detail::Adam> adam_w, adam_b;
  for (const auto& layer : model.mlp) {
    adam_w.emplace_back(cfg, layer.weight.size());
    adam_b.emplace_back(cfg, layer.bias.size());
  }

  std::vector<double> g_emb(n * d), g_lin(n);
  double g_bias = 0.0;
  std::vector<DenseLayer> g_mlp = model.mlp;
  Workspace ws;
  InstanceGradient ig;
  std::vector<std::size_t> order(data.size());
  std::uint64_t step = 0;
  TrainHistory history;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = CounterRng::keyed(cfg.seed, 0x7a11, epoch);
    shuffle(std::span(order), rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(g_emb.begin(), g_emb.end(), 0.0);
      std::fill(g_lin.begin(), g_lin.end(), 0.0);
      g_bias = 0.0;
      for (auto& layer : g_mlp) {
        std::fill(layer.weight.begin(), layer.weight.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
      }
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto inst = data[order[k]];
        backward(model, inst, ws, ig);
        batch_loss += ig.loss;
        g_bias += ig.bias;
        for (std::size_t j = 0; j < inst.ids.size(); ++j) {
          const std::size_t row = inst.ids[j];
          g_lin[row] += ig.linear[j];
          for (std::size_t c = 0; c < d; ++c) g_emb[row * d + c] += ig.embedding[j * d + c];
        }
        for (std::size_t l = 0; l < g_mlp.size(); ++l) {
          for (std::size_t q = 0; q < g_mlp[l].weight.size(); ++q) g_mlp[l].weight[q] += ig.mlp[l].weight[q];
          for (std::size_t q = 0; q < g_mlp[l].bias.size(); ++q) g_mlp[l].bias[q] += ig.mlp[l].bias[q];
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw DomainError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index));
      }
      epoch_loss += batch_loss;

      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : g_emb) g *= scale;
      for (auto& g : g_lin) g *= scale;
      g_bias *= scale;
      ++step;
      adam_emb.step(model.embedding, g_emb, frozen, step);
      adam_lin.step(model.linear, g_lin, {}, step);
      adam_bias.step(std::span<double>(&model.bias, 1), std::span<const double>(&g_bias, 1), {}, step);
      for (std::size_t l = 0; l < g_mlp.size(); ++l) {
        for (auto& g : g_mlp[l].weight) g *= scale;
        for (auto& g : g_mlp[l].bias) g *= scale;
        adam_w[l].step(model.mlp[l].weight, g_mlp[l].weight, {}, step);
        adam_b[l].step(model.mlp[l].bias, g_mlp[l].bias, {}, step);
      }
    }
    history.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return history;
}

inline Model train(const Dataset& data, const TrainConfig& cfg, TrainHistory* history = nullptr) {
  if (data.empty()) throw DomainError("cannot train on an empty dataset");
  ModelShape shape{cfg.backbone, data.offsets(), cfg.dim, cfg.hidden};
  Model model = init_model(shape, cfg.seed);
  auto h = fit(model, data, cfg);
  if (history != nullptr) *history = std::move(h);
  return model;
}

}  // namespace shapprune
