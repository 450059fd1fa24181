#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace exsr {

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const uint8_t> bytes);
  void update(const std::string& text);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::span<const uint8_t> bytes);

std::string base64_encode(std::span<const uint8_t> bytes);
/// Throws ValidationError on malformed input. Whitespace is ignored.
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace exsr
