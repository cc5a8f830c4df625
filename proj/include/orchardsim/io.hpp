#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace orchard {

/// Whole-file helpers; both throw IoError naming the path.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// 64-bit FNV-1a, used for manifest checksums and config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

}  // namespace orchard
