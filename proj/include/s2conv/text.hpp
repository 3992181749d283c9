#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace s2conv {

std::string trim(std::string_view text);
std::string to_upper(std::string_view text);
std::string to_lower(std::string_view text);

// Maximal runs of ASCII letters and digits, original case preserved.
std::vector<std::string> word_tokens(std::string_view text);

bool contains(std::string_view haystack, std::string_view needle);
std::string replace_all(std::string text, std::string_view from, std::string_view to);

// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a(std::string_view text);
// One splitmix64 step, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// UTC, second resolution, e.g. 2024-03-01T12:00:00Z.
std::string utc_timestamp();

std::string read_text_file(const std::filesystem::path& path);
// Writes via a sibling temp file and rename.
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace s2conv
