#pragma once

// Prune masks, the field-aware codebook and the rule that fills pruned
// embedding coordinates back in.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "shapprune/error.hpp"

namespace shapprune {

enum class PaddingMode : std::uint8_t { kZero = 0, kCodebook = 1 };

inline std::string_view to_string(PaddingMode mode) {
  return mode == PaddingMode::kZero ? "zero" : "codebook";
}

inline PaddingMode parse_padding(std::string_view s) {
  if (s == "zero") return PaddingMode::kZero;
  if (s == "codebook") return PaddingMode::kCodebook;
  throw DomainError("unknown padding mode '" + std::string(s) + "'");
}

// m x d placeholder matrix, one row per field.
struct Codebook {
  std::size_t fields = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // row-major m x d
  std::uint32_t frequency_fingerprint = 0;

  double at(std::size_t field, std::size_t c) const { return values[field * dim + c]; }
  std::span<const double> row(std::size_t field) const {
    return std::span<const double>(values).subspan(field * dim, dim);
  }
};

// Set of pruned (row, column) coordinates, stored as sorted column lists
// per embedding row.
class PruneMask {
 public:
  PruneMask() = default;
  PruneMask(std::size_t rows, std::size_t dim) : dim_(dim), columns_(rows) {}

  static PruneMask from_coordinates(std::size_t rows, std::size_t dim,
                                    std::span<const std::pair<std::uint64_t, std::uint32_t>> coords) {
    PruneMask mask(rows, dim);
    for (auto [r, c] : coords) {
      if (r >= rows || c >= dim) throw DomainError("mask coordinate out of range");
      mask.columns_[r].push_back(c);
    }
    for (auto& cols : mask.columns_) {
      std::sort(cols.begin(), cols.end());
      if (std::adjacent_find(cols.begin(), cols.end()) != cols.end()) {
        throw DomainError("duplicate mask coordinate");
      }
      mask.size_ += cols.size();
    }
    return mask;
  }

  static PruneMask full(std::size_t rows, std::size_t dim) {
    PruneMask mask(rows, dim);
    for (auto& cols : mask.columns_) {
      for (std::uint32_t c = 0; c < dim; ++c) cols.push_back(c);
    }
    mask.size_ = rows * dim;
    return mask;
  }

  std::size_t rows() const { return columns_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  std::span<const std::uint32_t> columns(std::size_t row) const { return columns_[row]; }

  bool contains(std::size_t row, std::uint32_t col) const {
    const auto& cols = columns_[row];
    return std::binary_search(cols.begin(), cols.end(), col);
  }

  // Dense row-major flags, 1 where pruned.
  std::vector<std::uint8_t> dense() const {
    std::vector<std::uint8_t> flags(rows() * dim_, 0);
    for (std::size_t r = 0; r < rows(); ++r) {
      for (auto c : columns_[r]) flags[r * dim_ + c] = 1;
    }
    return flags;
  }

  friend bool operator==(const PruneMask&, const PruneMask&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::vector<std::uint32_t>> columns_;
  std::size_t size_ = 0;
};

// Effective embedding accessor over a dense table: unpruned coordinates
// come from the table, pruned ones from zero or the field's codebook row.
class Imputation {
 public:
  Imputation(const PruneMask& mask, PaddingMode mode, const Codebook* codebook,
             std::span<const std::uint64_t> field_offsets)
      : mask_(&mask), mode_(mode), codebook_(codebook), offsets_(field_offsets) {
    if (mode == PaddingMode::kCodebook && codebook == nullptr) {
      throw DomainError("codebook padding requires a codebook");
    }
    if (codebook != nullptr && (codebook->fields + 1 != offsets_.size() || codebook->dim != mask.dim())) {
      throw DomainError("codebook shape does not match the model");
    }
  }

  const PruneMask& mask() const { return *mask_; }
  PaddingMode mode() const { return mode_; }
  const Codebook* codebook() const { return codebook_; }

  double padding(std::size_t field, std::size_t c) const {
    return mode_ == PaddingMode::kZero ? 0.0 : codebook_->at(field, c);
  }

  // Overwrites pruned coordinates of one looked-up row in place.
  void apply(std::size_t row, std::size_t field, std::span<double> out) const {
    for (auto c : mask_->columns(row)) out[c] = padding(field, c);
  }

  double value(std::span<const double> table, std::size_t row, std::size_t c) const {
    if (mask_->contains(row, static_cast<std::uint32_t>(c))) return padding(field_of(row), c);
    return table[row * mask_->dim() + c];
  }

  std::size_t field_of(std::size_t row) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), static_cast<std::uint64_t>(row));
    return static_cast<std::size_t>(it - offsets_.begin()) - 1;
  }

 private:
  const PruneMask* mask_;
  PaddingMode mode_;
  const Codebook* codebook_;
  std::span<const std::uint64_t> offsets_;
};

// Materializes the imputed table: E_{Q} with pruned entries replaced.
inline std::vector<double> impute(std::span<const double> table, const Imputation& imp) {
  std::vector<double> out(table.begin(), table.end());
  const std::size_t d = imp.mask().dim();
  for (std::size_t r = 0; r < imp.mask().rows(); ++r) {
    if (imp.mask().columns(r).empty()) continue;
    imp.apply(r, imp.field_of(r), std::span<double>(out).subspan(r * d, d));
  }
  return out;
}

}  // namespace shapprune
