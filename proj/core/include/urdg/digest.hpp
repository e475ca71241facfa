#pragma once

#include "urdg/config.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

namespace urdg {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Digest of the canonical (sorted-key, compact) JSON form.
std::string json_digest(const nlohmann::json& j);

std::string config_digest(const ExperimentConfig& config);
/// Same, with `seed` and `generator.seed` removed; groups runs that differ only by seed.
std::string seedless_digest(const ExperimentConfig& config);

}  // namespace urdg
