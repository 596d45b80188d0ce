#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace c3v {

// mt19937_64 with bit-level uniform doubles. std::uniform_real_distribution is
// implementation-defined, so golden outputs go through this instead.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  uint64_t next_index(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

std::string base64_encode(const uint8_t* data, size_t len);
std::string base64_encode(const std::vector<uint8_t>& data);
std::vector<uint8_t> base64_decode(const std::string& text);

// Hex-encoded SHA-256.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& text);
std::string sha256_hex(const std::vector<uint8_t>& data);
std::string sha256_file_hex(const std::filesystem::path& path);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const void* data, size_t len);
void write_file_text(const std::filesystem::path& path, const std::string& text);

// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(const std::string& text);

// Light suffix stripper so "walking" and "walk", "dancing" and "dance"
// compare equal. Not a linguistic stemmer.
std::string stem(const std::string& word);

}  // namespace c3v
