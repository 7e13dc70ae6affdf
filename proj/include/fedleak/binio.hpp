#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

#include "fedleak/linalg.hpp"

namespace fedleak {

// Little-endian binary tensor container primitives shared by the gradient
// update wire format and model checkpoints.
class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }
  void magic(const char m[4]) { buf_.append(m, 4); }
  void tensor(const Matrix& t) {
    u32(static_cast<std::uint32_t>(t.rows));
    u32(static_cast<std::uint32_t>(t.cols));
    for (double x : t.data) f64(x);
  }
  void vec(const Vec& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    u32(1);
    for (double x : v) f64(x);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

// Reader that reports the byte offset of any corruption or truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  void expect_magic(const char m[4], const std::string& what) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) {
      throw std::invalid_argument(what + ": bad magic at offset " + std::to_string(pos_));
    }
    pos_ += 4;
  }
  Matrix tensor(std::size_t max_elems = 1u << 28) {
    std::size_t at = pos_;
    std::uint32_t r = u32();
    std::uint32_t c = u32();
    if (static_cast<std::size_t>(r) * c > max_elems) {
      throw std::invalid_argument("tensor: implausible shape at offset " + std::to_string(at));
    }
    Matrix t(r, c);
    for (double& x : t.data) x = f64();
    return t;
  }
  Vec vec() {
    std::size_t at = pos_;
    Matrix t = tensor();
    if (t.cols != 1) throw std::invalid_argument("vector tensor expected at offset " + std::to_string(at));
    return t.data;
  }
  std::size_t offset() const { return pos_; }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw std::invalid_argument("truncated input at offset " + std::to_string(pos_) +
                                  " (need " + std::to_string(n) + " more bytes)");
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace fedleak
