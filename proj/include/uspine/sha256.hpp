#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uspine {

/// SHA-256 digest as lowercase hex. Used for checkpoint hashes in manifests
/// and for the stage-III freeze contract.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file_hex(const std::string& path);

}  // namespace uspine
