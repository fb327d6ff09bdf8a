#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "mmc/toy_pipeline.hpp"

namespace mmc {

// "key = value" lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> read_config_kv(const std::filesystem::path& path);

// File values (when given) overridden by flag values, then strictly parsed:
// unknown keys and out-of-range values throw std::invalid_argument.
PipelineConfig resolve_config(const std::optional<std::filesystem::path>& file,
                              const std::map<std::string, std::string>& overrides);

std::string render_config(const PipelineConfig& cfg);  // key-sorted "key = value" lines

}  // namespace mmc
