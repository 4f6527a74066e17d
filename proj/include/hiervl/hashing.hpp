#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace hiervl {

std::uint64_t fnv1a64(std::string_view bytes);

/// Hex SHA-1 of "blob <size>\0<bytes>", i.e. the id git gives the same content.
std::string git_blob_hash(std::string_view bytes);

std::string read_file(const std::string& path);

}  // namespace hiervl
