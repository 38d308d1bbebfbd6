#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "skad/synth.hpp"
#include "skad/trainer.hpp"

namespace skad {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` lines; blank lines and `#` comments are skipped.
KeyValues parse_key_values(std::istream& in);
KeyValues load_key_values(const std::filesystem::path& path);

/// Throws ConfigError for unknown keys or unparsable values.
void apply_key(TrainConfig& config, const std::string& key, const std::string& value);
void apply_key(SynthConfig& config, const std::string& key, const std::string& value);

template <class Config>
Config apply_keys(Config config, const KeyValues& entries) {
  for (const auto& [k, v] : entries) apply_key(config, k, v);
  return config;
}

/// Every key, one per line, in a fixed order; parses back to an equal config.
std::string to_text(const TrainConfig& config);
std::string to_text(const SynthConfig& config);
KeyValues to_key_values(const TrainConfig& config);
KeyValues to_key_values(const SynthConfig& config);

}  // namespace skad
