#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace bowl::io {

// Writes `contents` to a temporary file beside `path` and renames it over
// `path`, so readers see either the old file or the complete new one.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace bowl::io
