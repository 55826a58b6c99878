#pragma once

// Command-line front end: synth, train, eval, ablate, gradcheck.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical.

#include <filesystem>
#include <string>

#include "json.hpp"

namespace eigmeta::cli {

int run(int argc, const char* const* argv);

// Reads a TOML file into a flat JSON object. Nested tables are rejected.
nlohmann::json read_toml(const std::filesystem::path& path);

}  // namespace eigmeta::cli
