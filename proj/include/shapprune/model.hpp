#pragma once

// FM and DeepFM click-through-rate backbones over a single embedding table:
// lookup, forward, log loss and exact backward pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/imputation.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

// Predictions are clamped to [kClampEps, 1 - kClampEps].
inline constexpr double kClampEps = 1e-7;

enum class Backbone : std::uint8_t { kFm = 0, kDeepFm = 1 };

inline std::string_view to_string(Backbone b) { return b == Backbone::kFm ? "fm" : "deepfm"; }

inline Backbone parse_backbone(std::string_view s) {
  if (s == "fm") return Backbone::kFm;
  if (s == "deepfm") return Backbone::kDeepFm;
  throw DomainError("unknown backbone '" + std::string(s) + "'");
}

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weight;  // outputs x inputs, row-major
  std::vector<double> bias;    // outputs

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Dense embedding table E (n x d) plus the backbone parameters. Field j
// owns rows [field_offsets[j], field_offsets[j + 1]).
struct Model {
  Backbone backbone = Backbone::kFm;
  std::size_t dim = 0;
  std::vector<std::uint64_t> field_offsets{0};
  std::vector<double> embedding;  // n x d, row-major
  std::vector<double> linear;     // n
  double bias = 0.0;
  std::vector<DenseLayer> mlp;    // DeepFM only; last layer has one output

  std::size_t field_count() const { return field_offsets.size() - 1; }
  std::size_t feature_count() const { return field_offsets.back(); }
  std::size_t embedding_size() const { return embedding.size(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(embedding).subspan(i * dim, dim);
  }
  std::span<double> row(std::size_t i) { return std::span<double>(embedding).subspan(i * dim, dim); }

  std::size_t field_of(std::size_t row) const {
    auto it = std::upper_bound(field_offsets.begin(), field_offsets.end(), static_cast<std::uint64_t>(row));
    return static_cast<std::size_t>(it - field_offsets.begin()) - 1;
  }

  void validate() const {
    if (field_offsets.size() < 2 || field_offsets.front() != 0) throw DomainError("model needs at least one field");
    for (std::size_t j = 1; j < field_offsets.size(); ++j) {
      if (field_offsets[j] <= field_offsets[j - 1]) throw DomainError("field offsets must be strictly increasing");
    }
    if (dim == 0) throw DomainError("embedding dimension must be positive");
    const std::size_t n = feature_count();
    if (embedding.size() != n * dim) throw DomainError("embedding table shape mismatch");
    if (linear.size() != n) throw DomainError("linear weights shape mismatch");
    std::size_t width = field_count() * dim;
    if (backbone == Backbone::kFm && !mlp.empty()) throw DomainError("FM backbone carries no MLP");
    if (backbone == Backbone::kDeepFm) {
      if (mlp.empty()) throw DomainError("DeepFM backbone needs an MLP");
      for (const auto& layer : mlp) {
        if (layer.inputs != width || layer.weight.size() != layer.inputs * layer.outputs ||
            layer.bias.size() != layer.outputs) {
          throw DomainError("MLP layer shape mismatch");
        }
        width = layer.outputs;
      }
      if (width != 1) throw DomainError("MLP must end in a single output");
    }
    auto finite = [](std::span<const double> v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    bool ok = finite(embedding) && finite(linear) && std::isfinite(bias);
    for (const auto& layer : mlp) ok = ok && finite(layer.weight) && finite(layer.bias);
    if (!ok) throw DomainError("model contains non-finite parameters");
  }

  friend bool operator==(const Model&, const Model&) = default;
};

struct ModelShape {
  Backbone backbone = Backbone::kFm;
  std::vector<std::uint64_t> field_offsets;
  std::size_t dim = 8;
  std::vector<std::size_t> hidden{16, 16};
};

// Embeddings ~ U(-1/sqrt(d), 1/sqrt(d)), MLP weights He-uniform, every
// bias and the linear term zero.
inline Model init_model(const ModelShape& shape, std::uint64_t seed) {
  Model model;
  model.backbone = shape.backbone;
  model.dim = shape.dim;
  model.field_offsets = shape.field_offsets;
  if (model.field_offsets.size() < 2) throw DomainError("model needs at least one field");
  const std::size_t n = model.feature_count();
  auto rng = CounterRng::keyed(seed, 0x1417);
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.dim));
  model.embedding.resize(n * shape.dim);
  for (auto& x : model.embedding) x = (2.0 * rng.uniform() - 1.0) * scale;
  model.linear.assign(n, 0.0);
  if (shape.backbone == Backbone::kDeepFm) {
    std::size_t width = model.field_count() * shape.dim;
    auto add_layer = [&](std::size_t outputs) {
      DenseLayer layer{width, outputs, std::vector<double>(width * outputs), std::vector<double>(outputs, 0.0)};
      const double limit = std::sqrt(6.0 / static_cast<double>(width));
      for (auto& w : layer.weight) w = (2.0 * rng.uniform() - 1.0) * limit;
      model.mlp.push_back(std::move(layer));
      width = outputs;
    };
    for (std::size_t h : shape.hidden) add_layer(h);
    add_layer(1);
  }
  model.validate();
  return model;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp_prediction(double p) { return std::clamp(p, kClampEps, 1.0 - kClampEps); }

inline double log_loss(double prediction, int label) {
  const double p = clamp_prediction(prediction);
  return label ? -std::log(p) : -std::log1p(-p);
}

// Per-call buffers for forward/backward so hot loops do not allocate.
struct Workspace {
  std::vector<double> emb;                      // m x d looked-up embeddings
  std::vector<double> sums;                     // d
  std::vector<std::vector<double>> activations;  // per MLP layer output (post-ReLU)
  std::vector<std::vector<double>> deltas;
};

namespace detail {

inline void check_ids(const Model& model, std::span<const std::uint32_t> ids) {
  if (ids.size() != model.field_count()) throw DomainError("instance field count does not match the model");
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < model.field_offsets[j] || ids[j] >= model.field_offsets[j + 1]) {
      throw DomainError("feature id " + std::to_string(ids[j]) + " out of range for field " + std::to_string(j));
    }
  }
}

inline void check_finite(double x, const char* stage) {
  if (!std::isfinite(x)) throw DomainError(std::string("non-finite value in ") + stage);
}

}  // namespace detail

// Copies the rows of the active features into ws.emb (m x d).
inline std::span<double> embed_lookup(const Model& model, std::span<const std::uint32_t> ids, Workspace& ws) {
  detail::check_ids(model, ids);
  const std::size_t d = model.dim;
  ws.emb.resize(ids.size() * d);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    auto src = model.row(ids[j]);
    std::copy(src.begin(), src.end(), ws.emb.begin() + static_cast<std::ptrdiff_t>(j * d));
  }
  return ws.emb;
}

inline std::vector<std::vector<double>> embed_lookup(const Model& model, std::span<const std::uint32_t> ids) {
  Workspace ws;
  embed_lookup(model, ids, ws);
  std::vector<std::vector<double>> out;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    out.emplace_back(ws.emb.begin() + static_cast<std::ptrdiff_t>(j * model.dim),
                     ws.emb.begin() + static_cast<std::ptrdiff_t>((j + 1) * model.dim));
  }
  return out;
}

// Pre-sigmoid output given already looked-up (and possibly imputed)
// embeddings in `emb`. Every prediction path funnels through here.
inline double logit_from_embeddings(const Model& model, std::span<const std::uint32_t> ids,
                                    std::span<const double> emb, Workspace& ws) {
  const std::size_t m = ids.size();
  const std::size_t d = model.dim;
  double z = model.bias;
  for (std::size_t j = 0; j < m; ++j) z += model.linear[ids[j]];
  detail::check_finite(z, "linear term");

  // Pairwise term: 0.5 * sum_c [(sum_j e_jc)^2 - sum_j e_jc^2].
  ws.sums.assign(d, 0.0);
  double squares = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < d; ++c) {
      const double e = emb[j * d + c];
      ws.sums[c] += e;
      squares += e * e;
    }
  }
  double pair = 0.0;
  for (std::size_t c = 0; c < d; ++c) pair += ws.sums[c] * ws.sums[c];
  pair = 0.5 * (pair - squares);
  detail::check_finite(pair, "FM interaction");
  z += pair;

  if (!model.mlp.empty()) {
    ws.activations.resize(model.mlp.size());
    std::span<const double> input = emb;
    for (std::size_t l = 0; l < model.mlp.size(); ++l) {
      const auto& layer = model.mlp[l];
      auto& out = ws.activations[l];
      out.resize(layer.outputs);
      const bool hidden = l + 1 < model.mlp.size();
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        double acc = layer.bias[o];
        const double* w = layer.weight.data() + o * layer.inputs;
        for (std::size_t k = 0; k < layer.inputs; ++k) acc += w[k] * input[k];
        out[o] = hidden ? std::max(acc, 0.0) : acc;
      }
      input = out;
    }
    detail::check_finite(ws.activations.back()[0], "MLP");
    z += ws.activations.back()[0];
  }
  detail::check_finite(z, "logit");
  return z;
}

// Clamped predicted click probability. With an imputation, pruned
// coordinates of the looked-up rows are replaced before any interaction.
inline double forward(const Model& model, std::span<const std::uint32_t> ids, Workspace& ws,
                      const Imputation* imputation = nullptr) {
  auto emb = embed_lookup(model, ids, ws);
  if (imputation != nullptr) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      imputation->apply(ids[j], j, emb.subspan(j * model.dim, model.dim));
    }
  }
  return clamp_prediction(sigmoid(logit_from_embeddings(model, ids, emb, ws)));
}

inline double forward(const Model& model, const InstanceView& inst, const Imputation* imputation = nullptr) {
  Workspace ws;
  return forward(model, inst.ids, ws, imputation);
}

// Gradient of the log loss for one instance, restricted to the parameters
// the instance touches. Embedding and linear entries are per field, i.e.
// they belong to rows ids[j].
struct InstanceGradient {
  double loss = 0.0;
  double bias = 0.0;
  std::vector<double> linear;     // m
  std::vector<double> embedding;  // m x d
  std::vector<DenseLayer> mlp;    // same shapes as the model's MLP
};

// The logit derivative is sigmoid(z) - y on the unclamped prediction; the
// clamp only matters within 1e-7 of saturation.
inline void backward(const Model& model, const InstanceView& inst, Workspace& ws, InstanceGradient& grad) {
  const std::size_t m = inst.ids.size();
  const std::size_t d = model.dim;
  auto emb = embed_lookup(model, inst.ids, ws);
  const double z = logit_from_embeddings(model, inst.ids, emb, ws);
  const double p = sigmoid(z);
  grad.loss = log_loss(p, inst.label);
  const double dz = p - static_cast<double>(inst.label);

  grad.bias = dz;
  grad.linear.assign(m, dz);
  grad.embedding.resize(m * d);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < d; ++c) grad.embedding[j * d + c] = dz * (ws.sums[c] - emb[j * d + c]);
  }

  if (model.mlp.empty()) return;
  const std::size_t layers = model.mlp.size();
  grad.mlp.resize(layers);
  ws.deltas.resize(layers);
  ws.deltas[layers - 1].assign(1, dz);
  for (std::size_t l = layers; l-- > 0;) {
    const auto& layer = model.mlp[l];
    auto& g = grad.mlp[l];
    g.inputs = layer.inputs;
    g.outputs = layer.outputs;
    g.weight.assign(layer.weight.size(), 0.0);
    g.bias = ws.deltas[l];
    std::span<const double> input = l == 0 ? std::span<const double>(emb) : std::span<const double>(ws.activations[l - 1]);
    std::vector<double> dinput(layer.inputs, 0.0);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      const double delta = ws.deltas[l][o];
      if (delta == 0.0) continue;
      const double* w = layer.weight.data() + o * layer.inputs;
      double* gw = g.weight.data() + o * layer.inputs;
      for (std::size_t k = 0; k < layer.inputs; ++k) {
        gw[k] = delta * input[k];
        dinput[k] += delta * w[k];
      }
    }
    if (l == 0) {
      for (std::size_t k = 0; k < dinput.size(); ++k) grad.embedding[k] += dinput[k];
    } else {
      // ReLU: pass gradient only where the activation was positive.
      auto& prev = ws.deltas[l - 1];
      prev.resize(layer.inputs);
      for (std::size_t k = 0; k < layer.inputs; ++k) prev[k] = ws.activations[l - 1][k] > 0.0 ? dinput[k] : 0.0;
    }
  }
}

inline InstanceGradient backward(const Model& model, const InstanceView& inst) {
  Workspace ws;
  InstanceGradient grad;
  backward(model, inst, ws, grad);
  return grad;
}

}  // namespace shapprune
