#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dilie/image.hpp"

namespace dilie::cli {

// Full command-line entry point (dehaze | denoise | stylize | enhance |
// eval | synth). Returns the process exit code: 0 success, 1 runtime
// failure, 2 validation failure.
int run(int argc, const char* const* argv);

}  // namespace dilie::cli

namespace dilie {

// CorruptionSpec <-> JSON sidecar (written next to synthesized images).
nlohmann::json corruption_to_json(const CorruptionSpec& spec);
CorruptionSpec corruption_from_json(const nlohmann::json& j);

}  // namespace dilie
