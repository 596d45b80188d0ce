#include "c3v/util.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cstring>
#include <fstream>

#include "c3v/errors.hpp"

namespace c3v {

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const uint8_t* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t block = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < len) block |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) block |= data[i + 2];
    out.push_back(kB64[(block >> 18) & 63]);
    out.push_back(kB64[(block >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64[(block >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64[block & 63] : '=');
  }
  return out;
}

std::string base64_encode(const std::vector<uint8_t>& data) {
  return base64_encode(data.data(), data.size());
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  uint32_t block = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || std::isspace(static_cast<unsigned char>(c))) continue;
    const int v = b64_value(c);
    if (v < 0) throw Error(ErrorKind::config, "base64: invalid character");
    block = block << 6 | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<uint8_t>(block >> bits));
    }
  }
  return out;
}

std::string sha256_hex(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::config, "sha256 failed");
  }
  static const char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(text.data(), text.size());
}

std::string sha256_hex(const std::vector<uint8_t>& data) {
  return sha256_hex(data.data(), data.size());
}

std::string sha256_file_hex(const std::filesystem::path& path) {
  return sha256_hex(read_file_bytes(path));
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::config, "cannot open file: " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

std::string read_file_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file_bytes(const std::filesystem::path& path, const void* data, size_t len) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::config, "cannot write file: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw Error(ErrorKind::config, "write failed: " + path.string());
}

void write_file_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string stem(const std::string& word) {
  std::string w = word;
  for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto ends_with = [&](const char* suffix) {
    const size_t n = std::strlen(suffix);
    return w.size() > n + 1 && w.compare(w.size() - n, n, suffix) == 0;
  };
  if (ends_with("ing")) w.erase(w.size() - 3);
  else if (ends_with("ed")) w.erase(w.size() - 2);
  else if (ends_with("es")) w.erase(w.size() - 2);
  else if (ends_with("ly")) w.erase(w.size() - 2);
  else if (ends_with("s")) w.erase(w.size() - 1);
  if (w.size() > 3 && w.back() == 'e') w.pop_back();
  return w;
}

}  // namespace c3v
