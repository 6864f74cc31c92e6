#pragma once

#include <string>
#include <string_view>

namespace picar {

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

// Lowercase hex SHA-256 of a file's contents. Throws if the file is
// unreadable.
std::string sha256_file_hex(const std::string& path);

}  // namespace picar
