#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "slopekit/types.hpp"

namespace slopekit {

class ConfigError : public Error {
public:
  using Error::Error;
};

/// Keys accepted in config files and as CLI overrides; they mirror the
/// ScenarioConfig field names.
const std::vector<std::string>& config_keys();

/// Sets one field from its text form. Throws ConfigError for an unknown key or
/// an unparsable value. Domain checks are left to ScenarioConfig::validate().
void apply_override(ScenarioConfig& cfg, std::string_view key, std::string_view value);

/// Flat `key = value` text; `#` starts a comment. Fields not mentioned keep
/// their value from `base`.
ScenarioConfig parse_config(std::istream& is, ScenarioConfig base = {});

/// Inverse of parse_config: every key on its own line, numbers at 17 significant digits.
std::string format_config(const ScenarioConfig& cfg);

}  // namespace slopekit
