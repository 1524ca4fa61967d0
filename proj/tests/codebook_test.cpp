#include <gtest/gtest.h>

#include <vector>

#include "shapprune/codebook.hpp"
#include "support.hpp"

namespace shapprune {
namespace {

Model two_feature_field(std::vector<double> embedding, std::size_t dim) {
  Model model = init_model({Backbone::kFm, {0, embedding.size() / dim}, dim, {}}, 0);
  model.embedding = std::move(embedding);
  return model;
}

TEST(ClosedFormTest, WeightedMeanExample) {
  const Model model = two_feature_field({1.0, 0.0, 5.0, 4.0}, 2);
  const std::vector<double> freq{1.0, 3.0};
  const auto cb = compute_codebook(model, freq);
  EXPECT_EQ(cb.fields, 1u);
  EXPECT_EQ(cb.dim, 2u);
  EXPECT_DOUBLE_EQ(cb.at(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(cb.at(0, 1), 3.0);
}

TEST(ClosedFormTest, SingleFeatureFieldCopiesItsRow) {
  Model model = init_model({Backbone::kFm, {0, 1, 3}, 2, {}}, 0);
  model.embedding = {0.3, -0.7, 1.0, 2.0, 3.0, 4.0};
  const std::vector<double> freq{5.0, 1.0, 1.0};
  const auto cb = compute_codebook(model, freq);
  EXPECT_EQ(cb.at(0, 0), 0.3);
  EXPECT_EQ(cb.at(0, 1), -0.7);
  EXPECT_DOUBLE_EQ(cb.at(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(cb.at(1, 1), 3.0);
}

TEST(ClosedFormTest, ZeroFrequencyFieldIsAnError) {
  Model model = init_model({Backbone::kFm, {0, 2, 4}, 1, {}}, 0);
  const std::vector<double> freq{1.0, 1.0, 0.0, 0.0};
  try {
    compute_codebook(model, freq);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_STREQ(e.what(), "field 1 has zero total frequency");
  }
}

TEST(ClosedFormTest, DatasetFrequenciesAndFingerprint) {
  const Model model = testing::random_model(Backbone::kFm, {0, 2, 5}, 2, 1);
  const Dataset data({0, 2, 5}, {1, 0, 1}, {0, 2, 0, 4, 1, 4});
  const auto cb = compute_codebook(model, data);
  // field 0: rows 0,0,1 -> (2 E0 + E1) / 3
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(cb.at(0, c), (2.0 * model.embedding[c] + model.embedding[2 + c]) / 3.0, 1e-15);
  }
  EXPECT_NE(cb.frequency_fingerprint, 0u);
}

// Each coordinate of C*[j,:] lies in [min, max] of field j's column.
TEST(ClosedFormTest, ConvexHullMembershipProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::vector<std::uint64_t> offsets{0, 3, 4, 9};
    const Model model = testing::random_model(Backbone::kFm, offsets, 4, seed, 2.0);
    auto rng = CounterRng::keyed(seed, 1);
    std::vector<double> freq(9);
    for (auto& f : freq) f = static_cast<double>(rng.below(50) + 1);
    const auto cb = compute_codebook(model, freq);
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t c = 0; c < 4; ++c) {
        double lo = 1e300, hi = -1e300;
        for (auto i = offsets[j]; i < offsets[j + 1]; ++i) {
          lo = std::min(lo, model.embedding[i * 4 + c]);
          hi = std::max(hi, model.embedding[i * 4 + c]);
        }
        EXPECT_GE(cb.at(j, c), lo - 1e-15);
        EXPECT_LE(cb.at(j, c), hi + 1e-15);
      }
    }
  }
}

TEST(ClosedFormTest, ScalingAFieldsFrequenciesLeavesItUnchanged) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model model = testing::random_model(Backbone::kFm, {0, 3, 7}, 3, seed);
    auto rng = CounterRng::keyed(seed, 2);
    std::vector<double> freq(7);
    for (auto& f : freq) f = static_cast<double>(rng.below(20) + 1);
    auto scaled = freq;
    for (std::size_t i = 3; i < 7; ++i) scaled[i] *= 7.5;
    const auto a = compute_codebook(model, freq);
    const auto b = compute_codebook(model, scaled);
    for (std::size_t q = 0; q < a.values.size(); ++q) EXPECT_NEAR(a.values[q], b.values[q], 1e-14);
  }
}

TEST(ClosedFormTest, UniformFrequenciesGiveTheColumnMean) {
  const Model model = testing::random_model(Backbone::kFm, {0, 4}, 2, 5);
  const std::vector<double> freq(4, 3.0);
  const auto cb = compute_codebook(model, freq);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += model.embedding[i * 2 + c] / 4.0;
    EXPECT_NEAR(cb.at(0, c), mean, 1e-15);
  }
}

TEST(ClosedFormTest, MatchesNumericMinimizer) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model model = testing::random_model(Backbone::kFm, {0, 2, 5, 9}, 3, seed, 1.5);
    auto rng = CounterRng::keyed(seed, 3);
    std::vector<double> freq(9);
    for (auto& f : freq) f = static_cast<double>(rng.below(100));
    for (std::size_t j : {0u, 2u, 5u}) freq[j] += 1.0;  // every field nonzero
    const auto cb = compute_codebook(model, freq);
    const auto numeric = testing::minimize_field_quadratic(model, freq);
    for (std::size_t q = 0; q < numeric.size(); ++q) EXPECT_NEAR(cb.values[q], numeric[q], 1e-6) << "seed " << seed;
  }
}

class ObjectiveTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = testing::random_model(Backbone::kFm, {0, 4, 7, 12}, 3, 11, 1.0);
    data_ = testing::random_dataset({0, 4, 7, 12}, 200, 11, [](auto) { return 0.0; });
    cb_ = compute_codebook(model_, data_);
  }
  Model model_;
  Dataset data_;
  Codebook cb_;
};

TEST_F(ObjectiveTest, ClosedFormBeatsRandomPerturbations) {
  const std::size_t samples = 20000;
  const double base = codebook_objective(model_, data_, cb_, 0.5, samples, 42);
  auto rng = CounterRng::keyed(99, 0);
  for (int k = 0; k < 50; ++k) {
    Codebook moved = cb_;
    for (auto& v : moved.values) v += 0.1 * (2.0 * rng.uniform() - 1.0);
    const auto pinned = rng.below(moved.values.size());  // makes ||delta||_inf exactly 0.1
    moved.values[pinned] = cb_.values[pinned] + (rng.uniform() < 0.5 ? -0.1 : 0.1);
    EXPECT_LE(base, codebook_objective(model_, data_, moved, 0.5, samples, 42)) << "perturbation " << k;
  }
}

TEST_F(ObjectiveTest, ZeroCodebookIsNoBetter) {
  Codebook zero = cb_;
  std::fill(zero.values.begin(), zero.values.end(), 0.0);
  for (double fraction : {0.2, 0.5, 0.9}) {
    EXPECT_LE(codebook_objective(model_, data_, cb_, fraction, 10000, 7),
              codebook_objective(model_, data_, zero, fraction, 10000, 7));
  }
}

TEST_F(ObjectiveTest, RejectsBadFraction) {
  EXPECT_THROW(codebook_objective(model_, data_, cb_, 0.0, 10, 1), DomainError);
  EXPECT_THROW(codebook_objective(model_, data_, cb_, 1.0, 10, 1), DomainError);
}

TEST(ImputeTest, ZeroAndCodebookPadding) {
  const std::vector<std::uint64_t> offsets{0, 2, 3};
  const std::vector<double> table{1, 2, 3, 4, 5, 6};
  const std::vector<std::pair<std::uint64_t, std::uint32_t>> coords{{0, 1}, {2, 0}, {2, 1}};
  const auto mask = PruneMask::from_coordinates(3, 2, coords);
  Codebook cb{2, 2, {10, 20, 30, 40}, 0};

  const auto zero = impute(table, Imputation(mask, PaddingMode::kZero, nullptr, offsets));
  EXPECT_EQ(zero, (std::vector<double>{1, 0, 3, 4, 0, 0}));
  const auto coded = impute(table, Imputation(mask, PaddingMode::kCodebook, &cb, offsets));
  EXPECT_EQ(coded, (std::vector<double>{1, 20, 3, 4, 30, 40}));
}

TEST(ImputeTest, EmptyAndFullMasks) {
  const std::vector<std::uint64_t> offsets{0, 2};
  const std::vector<double> table{1, 2, 3, 4};
  Codebook cb{1, 2, {7, 8}, 0};
  const PruneMask none(2, 2);
  EXPECT_EQ(impute(table, Imputation(none, PaddingMode::kCodebook, &cb, offsets)), table);
  const auto all = PruneMask::full(2, 2);
  EXPECT_EQ(impute(table, Imputation(all, PaddingMode::kCodebook, &cb, offsets)), (std::vector<double>{7, 8, 7, 8}));
}

TEST(ImputeTest, CodebookModeNeedsACodebook) {
  const std::vector<std::uint64_t> offsets{0, 2};
  const PruneMask mask(2, 2);
  EXPECT_THROW(Imputation(mask, PaddingMode::kCodebook, nullptr, offsets), DomainError);
}

TEST(ImputeTest, MaskRejectsDuplicatesAndOutOfRange) {
  const std::vector<std::pair<std::uint64_t, std::uint32_t>> dup{{0, 1}, {0, 1}};
  EXPECT_THROW(PruneMask::from_coordinates(2, 2, dup), DomainError);
  const std::vector<std::pair<std::uint64_t, std::uint32_t>> out{{2, 0}};
  EXPECT_THROW(PruneMask::from_coordinates(2, 2, out), DomainError);
}

}  // namespace
}  // namespace shapprune
