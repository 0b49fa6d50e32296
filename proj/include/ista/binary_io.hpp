#pragma once

// Little-endian binary helpers shared by every on-disk format.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ista/error.hpp"

namespace ista::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

/// Append-only byte buffer; written to disk in one go.
class ByteWriter {
 public:
  void magic(std::string_view tag) {
    bytes_.insert(bytes_.end(), tag.begin(), tag.end());
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::vector<char> bytes_;
};

/// Bounds-checked cursor over a file image. Every read past the end is a
/// FormatError naming the file.
class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string origin)
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::string_view(bytes_.data() + pos_, tag.size()) != tag) {
      throw FormatError(origin_ + ": bad magic, expected '" +
                        std::string(tag) + "' got '" +
                        std::string(bytes_.data() + pos_, tag.size()) + "'");
    }
    pos_ += tag.size();
  }
  std::uint8_t u8() { return scalar<std::uint8_t>("u8"); }
  std::uint32_t u32() { return scalar<std::uint32_t>("u32"); }
  std::uint64_t u64() { return scalar<std::uint64_t>("u64"); }
  double f64() { return scalar<double>("f64"); }
  void f32s(std::span<float> out) { bulk(out.data(), out.size_bytes()); }
  void f64s(std::span<double> out) { bulk(out.data(), out.size_bytes()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n, "string");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t size() const { return bytes_.size(); }
  const std::string& origin() const { return origin_; }

  /// Rejects trailing garbage.
  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(origin_ + ": " + std::to_string(remaining()) +
                        " unexpected trailing bytes");
    }
  }

 private:
  template <class T>
  T scalar(const char* what) {
    T v;
    bulk(&v, sizeof v, what);
    return v;
  }
  void bulk(void* dst, std::size_t n, const char* what = "payload") {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(origin_ + ": truncated " + what + ", expected size " +
                        std::to_string(pos_ + n) + " bytes, actual size " +
                        std::to_string(bytes_.size()) + " bytes");
    }
  }

  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string origin_;
};

inline void write_file(const std::filesystem::path& path,
                       const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline ByteReader read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ByteReader(std::move(bytes), path.string());
}

}  // namespace ista::io
