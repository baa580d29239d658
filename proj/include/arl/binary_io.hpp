#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "arl/error.hpp"

namespace arl::io {

// Little-endian byte sink. Encoding is explicit so files are identical on
// any host.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  const std::vector<char>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError("write failed for '" + path + "'");
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }

  std::vector<char> buf_;
};

// Bounds-checked reader. Every read names the field so truncation errors
// point at what was missing.
class Reader {
 public:
  explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}

  static Reader load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "' for reading");
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(data));
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  bool empty() const { return buf_.empty(); }

  void expect_magic(std::string_view magic, std::string_view what) {
    need(magic.size(), "magic");
    if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw FormatError("bad magic: not a " + std::string(what) + " file");
    }
    pos_ += magic.size();
  }

  std::uint32_t u32(std::string_view field) { return static_cast<std::uint32_t>(get(4, field)); }
  std::uint64_t u64(std::string_view field) { return get(8, field); }
  std::int64_t i64(std::string_view field) { return static_cast<std::int64_t>(get(8, field)); }
  float f32(std::string_view field) { return std::bit_cast<float>(u32(field)); }
  double f64(std::string_view field) { return std::bit_cast<double>(u64(field)); }

  // Fails unless `count` elements of `width` bytes are still available.
  void require(std::size_t count, std::size_t width, std::string_view field) const {
    if (width != 0 && count > remaining() / width) {
      throw FormatError("truncated payload in field '" + std::string(field) + "': need " +
                        std::to_string(count * width) + " bytes, have " +
                        std::to_string(remaining()));
    }
  }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError("trailing " + std::to_string(remaining()) + " bytes after payload");
    }
  }

 private:
  void need(std::size_t n, std::string_view field) const {
    if (remaining() < n) {
      throw FormatError("truncated payload in field '" + std::string(field) + "'");
    }
  }

  std::uint64_t get(int n, std::string_view field) {
    need(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace arl::io
