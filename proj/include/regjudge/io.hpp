#pragma once

#include <filesystem>
#include <string>

namespace regjudge {

// Whole file as bytes. Throws Error{IoError}.
std::string read_file(const std::filesystem::path& path);

// Writes to a uniquely named sibling and renames it into place, so readers
// see either the old or the new content. Creates missing parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

}  // namespace regjudge
