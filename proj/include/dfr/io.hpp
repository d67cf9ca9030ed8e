#pragma once

#include <string>

#include "json.hpp"

namespace dfr {

// Writes to `path.tmp` and renames over `path`, so readers never observe a
// partially written file.
void write_text_atomic(const std::string& path, const std::string& contents);
void write_json_atomic(const std::string& path, const nlohmann::json& j);

std::string read_text(const std::string& path);
nlohmann::json read_json(const std::string& path);

}  // namespace dfr
