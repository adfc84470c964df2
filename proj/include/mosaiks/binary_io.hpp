#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "mosaiks/error.hpp"

namespace mosaiks {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Fingerprint = std::array<std::uint8_t, 32>;

inline Fingerprint sha256(const std::vector<std::uint8_t>& bytes) {
  Fingerprint out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != out.size()) {
    throw Error("sha256 failed");
  }
  return out;
}

inline std::string to_hex(const Fingerprint& fp) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  for (auto b : fp) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void raw(const std::uint8_t* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes_.data()),
            static_cast<std::streamsize>(bytes_.size()));
    if (!f) throw DataError("write failed: " + path);
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader over an in-memory buffer.
class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string name)
      : bytes_(std::move(bytes)), name_(std::move(name)) {}

  static ByteReader load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path);
  }

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw DataError(name_ + ": bad magic, expected " + std::string(m));
    pos_ += m.size();
  }

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void raw(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw DataError(name_ + ": trailing bytes");
  }

  const std::string& name() const { return name_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(name_ + ": truncated file");
  }

  std::vector<std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace mosaiks
