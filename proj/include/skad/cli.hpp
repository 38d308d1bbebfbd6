#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace skad {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumerical = 3 };

/// Entry point of the `skad` tool: synth | train | score | eval | baseline.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

/// Keeps freed tensor storage in the heap instead of returning it to the OS
/// after every training step. Call once at program start.
void keep_heap_resident();

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace skad
