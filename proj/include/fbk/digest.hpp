#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fbk/errors.hpp"

namespace fbk {

/// SHA-1, used for content-addressing reports: every emitted report embeds
/// the digest of its resolved configuration and of any binary inputs it
/// consumed, so identical invocations are byte-comparable.
class Sha1 {
 public:
  Sha1() { reset(); }

  void reset() {
    h_ = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    buffer_.clear();
    total_bits_ = 0;
  }

  void update(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    total_bits_ += static_cast<std::uint64_t>(len) * 8;
    buffer_.insert(buffer_.end(), bytes, bytes + len);
    while (buffer_.size() >= 64) {
      process(buffer_.data());
      buffer_.erase(buffer_.begin(), buffer_.begin() + 64);
    }
  }

  void update(const std::string& s) { update(s.data(), s.size()); }

  std::string hex_digest() {
    std::vector<unsigned char> tail = buffer_;
    tail.push_back(0x80);
    while (tail.size() % 64 != 56) tail.push_back(0);
    for (int i = 7; i >= 0; --i)
      tail.push_back(static_cast<unsigned char>(total_bits_ >> (8 * i)));
    auto h = h_;
    for (std::size_t off = 0; off + 64 <= tail.size(); off += 64) process_into(tail.data() + off, h);
    char out[41];
    std::snprintf(out, sizeof out, "%08x%08x%08x%08x%08x", h[0], h[1], h[2], h[3], h[4]);
    return std::string(out);
  }

 private:
  static std::uint32_t rol(std::uint32_t v, int bits) {
    return (v << bits) | (v >> (32 - bits));
  }

  void process(const unsigned char* block) { process_into(block, h_); }

  static void process_into(const unsigned char* block, std::array<std::uint32_t, 5>& h) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i) {
      w[i] = (std::uint32_t(block[i * 4]) << 24) | (std::uint32_t(block[i * 4 + 1]) << 16) |
             (std::uint32_t(block[i * 4 + 2]) << 8) | std::uint32_t(block[i * 4 + 3]);
    }
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

    auto [a, b, c, d, e] = h;
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  std::array<std::uint32_t, 5> h_;
  std::vector<unsigned char> buffer_;
  std::uint64_t total_bits_ = 0;
};

inline std::string sha1_hex(const std::string& content) {
  Sha1 s;
  s.update(content);
  return s.hex_digest();
}

/// Git-style blob hash: sha1("blob <len>\0<content>").
inline std::string git_blob_hash(const std::string& content) {
  Sha1 s;
  s.update("blob " + std::to_string(content.size()));
  s.update("\0", 1);
  s.update(content);
  return s.hex_digest();
}

inline std::string git_blob_hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot hash missing file " + path);
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return git_blob_hash(content);
}

}  // namespace fbk
