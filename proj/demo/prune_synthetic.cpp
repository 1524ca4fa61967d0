// End-to-end library use: synthesize data, train an FM, score the embedding
// table with Shapley values, then compare padding modes over a sparsity grid.

#include <cstdio>

#include "shapprune/shapprune.hpp"

using namespace shapprune;

int main() {
  const auto syn = make_synthetic(SyntheticConfig{});
  const auto vocab = build_vocabulary(syn.rows, syn.schema, 0);
  const auto [train_set, test_set] = split(encode_rows(syn.rows, vocab), 0.8, 1);

  TrainConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 3;
  cfg.lr = 3e-3;
  const Model model = train(train_set, cfg);
  const auto full = evaluate(model, test_set);
  std::printf("dense: auc=%.4f logloss=%.4f params=%zu\n", *full.auc, full.logloss, model.embedding_size());

  const auto scores = estimate_shapley(model, train_set, {1, 7, default_threads()});
  const auto codebook = compute_codebook(model, train_set);
  const std::vector<double> grid{0.5, 0.8, 0.9, 0.95, 0.99};
  for (auto mode : {PaddingMode::kZero, PaddingMode::kCodebook}) {
    std::printf("padding=%s\n", std::string(to_string(mode)).c_str());
    const auto points = prune_curve(model, scores, grid, mode, &codebook, test_set, train_set.frequencies());
    std::fputs(curve_csv(points).c_str(), stdout);
  }
}
