#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace timt::util {

// Minimal SHA-256, used to fingerprint checkpoints and datasets.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  std::string hex_digest();  // finalizes; object must not be reused

 private:
  void process_block(const uint8_t* block);

  uint32_t h_[8];
  uint64_t total_ = 0;
  uint8_t buf_[64];
  size_t buf_len_ = 0;
};

std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace timt::util
