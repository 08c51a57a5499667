#pragma once

// Little-endian byte framing shared by the EMIF and EMIC containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emi/error.hpp"

namespace emi::binio {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }

  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  void require(std::uint64_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated input while reading ") + what, pos_);
  }
  void bytes(void* dst, std::size_t n, const char* what) {
    require(n, what);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get_le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get_le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get_le(4, what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(get_le(8, what)); }

 private:
  std::uint64_t get_le(int n, const char* what) {
    require(static_cast<std::uint64_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> data_;
  std::uint64_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace emi::binio
