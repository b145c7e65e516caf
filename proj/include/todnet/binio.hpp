#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "todnet/errors.hpp"

namespace todnet {

// Little-endian byte buffer codec used by the TDE1 and TODF formats.

struct ByteWriter {
  std::string bytes;

  void raw(const void* p, std::size_t n) {
    bytes.append(static_cast<const char*>(p), n);
  }
  void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    le(b);
  }
  void f64(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, 8);
    le(b);
  }

 private:
  template <typename T>
  void le(T v) {
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    bytes.append(buf, sizeof(T));
  }
};

struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::string what;  // context for error messages

  void need(std::size_t n) {
    if (pos + n > bytes.size())
      throw ParseError(what + ": truncated file (need " + std::to_string(n) + " bytes at offset " +
                       std::to_string(pos) + ", have " + std::to_string(bytes.size() - pos) + ")");
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() {
    std::uint32_t b = le<std::uint32_t>();
    float v;
    std::memcpy(&v, &b, 4);
    return v;
  }
  double f64() {
    std::uint64_t b = le<std::uint64_t>();
    double v;
    std::memcpy(&v, &b, 8);
    return v;
  }
  bool at_end() const { return pos == bytes.size(); }

 private:
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
  }
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path + ": cannot open file");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError(path + ": cannot open file for writing");
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw UsageError(path + ": write failed");
}

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace todnet
