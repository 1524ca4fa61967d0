#pragma once

// Tabular CTR data: schema, per-field vocabularies with OOV handling and
// the encoded one-hot-per-field dataset.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "shapprune/container.hpp"
#include "shapprune/error.hpp"
#include "shapprune/rng.hpp"

namespace shapprune {

inline constexpr std::string_view kMissingToken = "<missing>";
inline constexpr std::string_view kOovToken = "<oov>";

enum class FieldKind : std::uint8_t { kCategorical = 0, kNumeric = 1 };

struct FieldSchema {
  std::vector<std::string> names;
  std::vector<FieldKind> kinds;

  std::size_t field_count() const { return names.size(); }

  void validate() const {
    if (names.empty()) throw DomainError("schema must declare at least one field");
    if (names.size() != kinds.size()) throw DomainError("schema names and kinds differ in length");
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
      if (!seen.insert(n).second) throw DomainError("duplicate field name '" + n + "'");
    }
  }

  static FieldSchema categorical(std::size_t m) {
    FieldSchema s;
    for (std::size_t j = 0; j < m; ++j) {
      s.names.push_back("f" + std::to_string(j));
      s.kinds.push_back(FieldKind::kCategorical);
    }
    return s;
  }
};

// One row per line, "name,kind" with kind in {categorical, numeric}.
inline FieldSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema " + path.string());
  FieldSchema schema;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw IoError("schema line " + std::to_string(lineno) + ": expected 'name,kind'");
    }
    const std::string kind = line.substr(comma + 1);
    schema.names.push_back(line.substr(0, comma));
    if (kind == "categorical") {
      schema.kinds.push_back(FieldKind::kCategorical);
    } else if (kind == "numeric") {
      schema.kinds.push_back(FieldKind::kNumeric);
    } else {
      throw IoError("schema line " + std::to_string(lineno) + ": unknown field kind '" + kind + "'");
    }
  }
  schema.validate();
  return schema;
}

inline void save_schema(const FieldSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write schema " + path.string());
  for (std::size_t j = 0; j < schema.field_count(); ++j) {
    out << schema.names[j] << ',' << (schema.kinds[j] == FieldKind::kNumeric ? "numeric" : "categorical")
        << '\n';
  }
}

// Each row holds the label column followed by m token columns, as read.
using RawRows = std::vector<std::vector<std::string>>;

inline RawRows parse_csv(std::string_view text) {
  RawRows rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) {
        cols.emplace_back(line.substr(start));
        break;
      }
      cols.emplace_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    rows.push_back(std::move(cols));
  }
  return rows;
}

inline RawRows read_csv(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline void write_csv(const RawRows& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out << ',';
      out << row[k];
    }
    out << '\n';
  }
}

namespace detail {

inline std::string format_number(double x) {
  if (x == std::floor(x) && std::abs(x) < 9.0e15) {
    return std::to_string(static_cast<long long>(x));
  }
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Numeric values above 2 collapse to ceil(log2(x)); the rest keep their
// value as the token.
inline std::string bucketize_numeric(std::optional<double> x) {
  if (!x) return std::string(kMissingToken);
  const double v = *x;
  if (std::isnan(v)) return std::string(kMissingToken);
  if (v > 2.0) return detail::format_number(std::ceil(std::log2(v)));
  return detail::format_number(v);
}

// Turns one raw cell into the token used for vocabulary lookup.
inline std::string normalize_token(std::string_view cell, FieldKind kind, std::size_t row) {
  if (cell.empty()) return std::string(kMissingToken);
  if (kind == FieldKind::kCategorical) return std::string(cell);
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw IoError("row " + std::to_string(row) + ": cannot parse numeric value '" + std::string(cell) + "'");
  }
  return bucketize_numeric(v);
}

struct FieldVocabulary {
  std::vector<std::string> tokens;  // in id order; the OOV id follows them
  std::unordered_map<std::string, std::uint32_t> ids;

  std::uint32_t oov_local() const { return static_cast<std::uint32_t>(tokens.size()); }
  std::size_t size() const { return tokens.size() + 1; }
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(FieldSchema schema, std::vector<FieldVocabulary> fields, std::uint64_t min_count)
      : schema_(std::move(schema)), fields_(std::move(fields)), min_count_(min_count) {
    offsets_.assign(1, 0);
    for (const auto& f : fields_) offsets_.push_back(offsets_.back() + f.size());
  }

  const FieldSchema& schema() const { return schema_; }
  std::size_t field_count() const { return fields_.size(); }
  std::size_t feature_count() const { return offsets_.back(); }
  std::uint64_t min_count() const { return min_count_; }
  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const FieldVocabulary& field(std::size_t j) const { return fields_[j]; }

  std::uint32_t oov_id(std::size_t j) const {
    return static_cast<std::uint32_t>(offsets_[j] + fields_[j].oov_local());
  }

  // Token must already be normalized.
  std::uint32_t lookup(std::size_t j, const std::string& token) const {
    const auto& f = fields_[j];
    auto it = f.ids.find(token);
    const std::uint32_t local = it == f.ids.end() ? f.oov_local() : it->second;
    return static_cast<std::uint32_t>(offsets_[j] + local);
  }

  const std::string& token_of(std::size_t j, std::uint32_t global_id) const {
    static const std::string oov(kOovToken);
    const auto local = global_id - offsets_[j];
    const auto& f = fields_[j];
    return local < f.tokens.size() ? f.tokens[local] : oov;
  }

 private:
  FieldSchema schema_;
  std::vector<FieldVocabulary> fields_;
  std::vector<std::uint64_t> offsets_{0};
  std::uint64_t min_count_ = 0;
};

namespace detail {

inline void check_columns(const RawRows& rows, std::size_t m) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m + 1) {
      throw IoError("row " + std::to_string(r + 1) + ": expected " + std::to_string(m + 1) +
                    " columns, found " + std::to_string(rows[r].size()));
    }
  }
}

}  // namespace detail

// Ids follow first appearance within each field; tokens seen fewer than
// min_count times share the field's OOV id, which is always materialized.
inline Vocabulary build_vocabulary(const RawRows& rows, const FieldSchema& schema, std::uint64_t min_count) {
  schema.validate();
  const std::size_t m = schema.field_count();
  detail::check_columns(rows, m);

  std::vector<FieldVocabulary> fields(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<std::string> order;
    std::unordered_map<std::string, std::uint64_t> counts;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::string tok = normalize_token(rows[r][j + 1], schema.kinds[j], r + 1);
      auto [it, inserted] = counts.try_emplace(tok, 0);
      if (inserted) order.push_back(tok);
      ++it->second;
    }
    auto& f = fields[j];
    for (const auto& tok : order) {
      if (counts[tok] < min_count) continue;
      f.ids.emplace(tok, static_cast<std::uint32_t>(f.tokens.size()));
      f.tokens.push_back(tok);
    }
  }
  return Vocabulary(schema, std::move(fields), min_count);
}

struct InstanceView {
  std::uint8_t label;
  std::span<const std::uint32_t> ids;  // one global feature id per field
};

// Encoded instances stored flat (instance-major ids) plus per-feature
// occurrence counts. Immutable once built.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<std::uint64_t> field_offsets, std::vector<std::uint8_t> labels,
          std::vector<std::uint32_t> ids)
      : offsets_(std::move(field_offsets)), labels_(std::move(labels)), ids_(std::move(ids)) {
    if (offsets_.size() < 2) throw DomainError("dataset needs at least one field");
    for (std::size_t j = 1; j < offsets_.size(); ++j) {
      if (offsets_[j] <= offsets_[j - 1]) throw DomainError("field offsets must be strictly increasing");
    }
    const std::size_t m = field_count();
    if (ids_.size() != labels_.size() * m) throw DomainError("ids do not match instance count");
    frequencies_.assign(offsets_.back(), 0);
    for (std::size_t k = 0; k < labels_.size(); ++k) {
      if (labels_[k] > 1) throw DomainError("label must be 0 or 1");
      for (std::size_t j = 0; j < m; ++j) {
        const std::uint32_t id = ids_[k * m + j];
        if (id < offsets_[j] || id >= offsets_[j + 1]) {
          throw DomainError("instance " + std::to_string(k) + ": id " + std::to_string(id) +
                            " outside field " + std::to_string(j));
        }
        ++frequencies_[id];
      }
    }
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t field_count() const { return offsets_.size() - 1; }
  std::size_t feature_count() const { return offsets_.back(); }
  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }
  const std::vector<std::uint32_t>& ids() const { return ids_; }
  const std::vector<std::uint64_t>& frequencies() const { return frequencies_; }

  InstanceView operator[](std::size_t k) const {
    const std::size_t m = field_count();
    return {labels_[k], std::span<const std::uint32_t>(ids_).subspan(k * m, m)};
  }

  std::size_t field_of(std::uint32_t id) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), static_cast<std::uint64_t>(id));
    return static_cast<std::size_t>(it - offsets_.begin()) - 1;
  }

  Dataset select(std::span<const std::size_t> rows) const {
    const std::size_t m = field_count();
    std::vector<std::uint8_t> labels;
    std::vector<std::uint32_t> ids;
    labels.reserve(rows.size());
    ids.reserve(rows.size() * m);
    for (std::size_t r : rows) {
      labels.push_back(labels_[r]);
      auto inst = (*this)[r];
      ids.insert(ids.end(), inst.ids.begin(), inst.ids.end());
    }
    return Dataset(offsets_, std::move(labels), std::move(ids));
  }

 private:
  std::vector<std::uint64_t> offsets_{0};
  std::vector<std::uint8_t> labels_;
  std::vector<std::uint32_t> ids_;
  std::vector<std::uint64_t> frequencies_;
};

namespace detail {

inline std::uint8_t parse_label(const std::string& cell, std::size_t row) {
  if (cell.empty()) throw IoError("row " + std::to_string(row) + ": missing label");
  if (cell == "0") return 0;
  if (cell == "1") return 1;
  throw IoError("row " + std::to_string(row) + ": label must be 0 or 1, got '" + cell + "'");
}

template <typename TokenFn>
Dataset encode_with(const RawRows& rows, const Vocabulary& vocab, TokenFn&& token) {
  if (rows.empty()) throw DomainError("empty dataset");
  const std::size_t m = vocab.field_count();
  check_columns(rows, m);
  std::vector<std::uint8_t> labels;
  std::vector<std::uint32_t> ids;
  labels.reserve(rows.size());
  ids.reserve(rows.size() * m);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    labels.push_back(parse_label(rows[r][0], r + 1));
    for (std::size_t j = 0; j < m; ++j) ids.push_back(vocab.lookup(j, token(rows[r][j + 1], j, r + 1)));
  }
  return Dataset(vocab.offsets(), std::move(labels), std::move(ids));
}

}  // namespace detail

// Unknown tokens resolve to the field's OOV id.
inline Dataset encode_rows(const RawRows& rows, const Vocabulary& vocab) {
  const auto& kinds = vocab.schema().kinds;
  return detail::encode_with(rows, vocab, [&](const std::string& cell, std::size_t j, std::size_t r) {
    return normalize_token(cell, kinds[j], r);
  });
}

// Same as encode_rows for rows whose tokens are already normalized, such as
// the output of decode_rows.
inline Dataset encode_tokens(const RawRows& rows, const Vocabulary& vocab) {
  return detail::encode_with(rows, vocab,
                             [](const std::string& cell, std::size_t, std::size_t) -> const std::string& {
                               return cell;
                             });
}

inline RawRows decode_rows(const Dataset& data, const Vocabulary& vocab) {
  RawRows rows;
  rows.reserve(data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    auto inst = data[k];
    std::vector<std::string> row;
    row.reserve(inst.ids.size() + 1);
    row.push_back(inst.label ? "1" : "0");
    for (std::size_t j = 0; j < inst.ids.size(); ++j) row.push_back(vocab.token_of(j, inst.ids[j]));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Uniform subsample without replacement of round(fraction * |D|) rows,
// original order preserved.
inline Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("fraction must lie in (0, 1]");
  std::size_t keep = static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(data.size())));
  keep = std::max<std::size_t>(keep, 1);
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  auto rng = CounterRng::keyed(seed, 0x5ab5a3b1e);
  shuffle(std::span(rows), rng);
  rows.resize(keep);
  std::sort(rows.begin(), rows.end());
  return data.select(rows);
}

// Splits rows into (first, second) with round(fraction * |D|) rows in the
// first part, chosen uniformly at random.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  auto rng = CounterRng::keyed(seed, 0x5917);
  shuffle(std::span(rows), rng);
  const auto cut = static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> a(rows.begin(), rows.begin() + cut), b(rows.begin() + cut, rows.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {data.select(a), data.select(b)};
}

inline std::uint32_t dataset_fingerprint(const Dataset& data) {
  ByteWriter w;
  for (auto v : data.offsets()) w.u64(v);
  w.bytes(data.labels());
  for (auto id : data.ids()) w.u32(id);
  return crc32_of(w.buffer());
}

inline constexpr std::uint32_t kVocabSection = section_tag("VOCB");

inline void write_vocabulary(ByteWriter& w, const Vocabulary& vocab) {
  w.u64(vocab.field_count());
  w.u64(vocab.min_count());
  for (std::size_t j = 0; j < vocab.field_count(); ++j) {
    w.str(vocab.schema().names[j]);
    w.u8(static_cast<std::uint8_t>(vocab.schema().kinds[j]));
    const auto& f = vocab.field(j);
    w.u64(f.tokens.size());
    for (const auto& t : f.tokens) w.str(t);
  }
}

inline Vocabulary read_vocabulary(ByteReader& r) {
  const std::uint64_t m = r.u64();
  const std::uint64_t min_count = r.u64();
  r.need_elements(m, 13);
  FieldSchema schema;
  std::vector<FieldVocabulary> fields(m);
  for (std::uint64_t j = 0; j < m; ++j) {
    schema.names.push_back(r.str());
    const auto kind = r.u8();
    if (kind > 1) throw IoError("unknown field kind in vocabulary");
    schema.kinds.push_back(static_cast<FieldKind>(kind));
    const std::uint64_t count = r.u64();
    r.need_elements(count, 4);
    auto& f = fields[j];
    for (std::uint64_t k = 0; k < count; ++k) {
      f.tokens.push_back(r.str());
      f.ids.emplace(f.tokens.back(), static_cast<std::uint32_t>(k));
    }
  }
  schema.validate();
  return Vocabulary(std::move(schema), std::move(fields), min_count);
}

inline std::vector<std::uint8_t> serialize_vocabulary(const Vocabulary& vocab) {
  ContainerWriter out(FileKind::kVocabulary);
  ByteWriter w;
  write_vocabulary(w, vocab);
  out.section(kVocabSection, w);
  return std::move(out).finish();
}

inline void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_vocabulary(vocab));
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  auto c = Container::parse(read_file_bytes(path), FileKind::kVocabulary);
  auto r = c.reader(kVocabSection);
  return read_vocabulary(r);
}

}  // namespace shapprune
