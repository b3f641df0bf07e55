#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace subsel {

// FNV-1a 64-bit digest as 16 lowercase hex chars.
std::string fnv1a_hex(std::string_view bytes);

// Flat little-endian f32 blobs (row-major payload, no header).
void write_f32_blob(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f32_blob(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace subsel
