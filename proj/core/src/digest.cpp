#include "urdg/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace urdg {

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::string json_digest(const nlohmann::json& j) { return sha256_hex(j.dump()); }

std::string config_digest(const ExperimentConfig& config) { return json_digest(nlohmann::json(config)); }

std::string seedless_digest(const ExperimentConfig& config) {
  nlohmann::json j = config;
  j.erase("seed");
  j["generator"].erase("seed");
  return json_digest(j);
}

}  // namespace urdg
