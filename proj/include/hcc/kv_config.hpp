#pragma once

// Flat key=value configuration files ('#' starts a comment).

#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hcc/model.hpp"

namespace hcc {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

/// Applies overrides; unknown keys and unparsable values throw DataError.
void apply_key_values(HccConfig& config, const KeyValues& kv);
std::vector<std::pair<std::string, std::string>> to_key_values(const HccConfig& config);

}  // namespace hcc
