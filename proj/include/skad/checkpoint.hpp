#pragma once

#include <filesystem>
#include <iosfwd>

#include "skad/trainer.hpp"

namespace skad {

inline constexpr const char* kCheckpointMagic = "skad-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint: config, normalization stats, center, parameters and
/// batchnorm statistics, doubles printed with 17 significant digits so a
/// round trip is bit-exact.
void write_checkpoint(std::ostream& out, const Detector& detector);
/// Throws ConfigError on a version mismatch, ParseError on malformed content.
Detector read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Detector& detector);
Detector load_checkpoint(const std::filesystem::path& path);

}  // namespace skad
