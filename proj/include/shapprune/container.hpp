#pragma once

// "SHVR" container shared by every file the library writes.
//
//   magic "SHVR" | version u32 | kind u8 | section* | crc32 u32
//   section = tag u32 | length u64 | payload[length]
//
// All integers and doubles are little-endian. The CRC32 (zlib polynomial)
// covers every byte before the footer.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shapprune/error.hpp"

namespace shapprune {

inline constexpr std::array<char, 4> kMagic{'S', 'H', 'V', 'R'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class FileKind : std::uint8_t {
  kVocabulary = 1,
  kModel = 2,
  kScores = 3,
  kPruned = 4,
};

constexpr std::uint32_t section_tag(const char (&s)[5]) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[3])) << 24;
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }

  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return get_le<std::uint8_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  std::vector<double> f64s(std::size_t count) {
    need_elements(count, 8);
    std::vector<double> v(count);
    for (auto& x : v) x = f64();
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t count) {
    need(count);
    auto s = data_.subspan(pos_, count);
    pos_ += count;
    return s;
  }

  // Guards allocations driven by untrusted counts.
  void need_elements(std::uint64_t count, std::uint64_t width) const {
    if (width != 0 && count > remaining() / width) throw IoError("truncated file");
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t count) const {
    if (count > remaining()) throw IoError("truncated file");
  }

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v = static_cast<T>(v | static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i)));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Assembles one container file in memory.
class ContainerWriter {
 public:
  explicit ContainerWriter(FileKind kind) {
    for (char c : kMagic) out_.u8(static_cast<std::uint8_t>(c));
    out_.u32(kFormatVersion);
    out_.u8(static_cast<std::uint8_t>(kind));
  }

  void section(std::uint32_t tag, const ByteWriter& payload) {
    out_.u32(tag);
    out_.u64(payload.size());
    out_.bytes(payload.buffer());
  }

  std::vector<std::uint8_t> finish() && {
    const std::uint32_t crc = crc32_of(out_.buffer());
    out_.u32(crc);
    return std::move(out_.buffer());
  }

 private:
  ByteWriter out_;
};

// Parsed view over a container file. Holds the bytes; section spans point
// into them.
class Container {
 public:
  Container(const Container&) = delete;
  Container& operator=(const Container&) = delete;
  Container(Container&&) = default;
  Container& operator=(Container&&) = default;

  static Container parse(std::vector<std::uint8_t> bytes, FileKind expected) {
    Container c;
    c.bytes_ = std::move(bytes);
    const auto& b = c.bytes_;
    if (b.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), b.begin(),
                                    [](char m, std::uint8_t x) { return static_cast<std::uint8_t>(m) == x; })) {
      throw IoError("not a SHVR checkpoint");
    }
    ByteReader head(std::span<const std::uint8_t>(b).subspan(4));
    const std::uint32_t version = head.u32();
    if (version != kFormatVersion) {
      throw IoError("unsupported version " + std::to_string(version));
    }
    const auto kind = static_cast<FileKind>(head.u8());
    if (b.size() < 13) throw IoError("truncated file");
    const std::span<const std::uint8_t> body(b.data(), b.size() - 4);
    ByteReader footer(std::span<const std::uint8_t>(b).subspan(b.size() - 4));
    if (crc32_of(body) != footer.u32()) throw IoError("corrupt checkpoint: CRC mismatch");
    if (kind != expected) {
      throw IoError("wrong SHVR file kind: expected " + std::to_string(static_cast<int>(expected)) +
                    ", found " + std::to_string(static_cast<int>(kind)));
    }
    ByteReader r(body.subspan(9));
    while (!r.done()) {
      const std::uint32_t tag = r.u32();
      const std::uint64_t len = r.u64();
      if (len > r.remaining()) throw IoError("truncated file");
      c.sections_[tag] = r.take(static_cast<std::size_t>(len));
    }
    return c;
  }

  static FileKind peek_kind(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 9) throw IoError("truncated file");
    return static_cast<FileKind>(bytes[8]);
  }

  bool has(std::uint32_t tag) const { return sections_.contains(tag); }

  ByteReader reader(std::uint32_t tag) const {
    auto it = sections_.find(tag);
    if (it == sections_.end()) throw IoError("missing section in checkpoint");
    return ByteReader(it->second);
  }

  std::optional<ByteReader> maybe_reader(std::uint32_t tag) const {
    if (!has(tag)) return std::nullopt;
    return reader(tag);
  }

 private:
  Container() = default;

  std::vector<std::uint8_t> bytes_;
  std::map<std::uint32_t, std::span<const std::uint8_t>> sections_;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace shapprune
