#pragma once

// Flat "key=value" text: one entry per line, '#' starts a comment line,
// surrounding whitespace is ignored. Order is preserved on write.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace duet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

std::map<std::string, std::string> parse_kv(const std::string& text);
std::map<std::string, std::string> read_kv(const std::filesystem::path& path);
std::string format_kv(const KeyValues& entries);
// Atomic (temporary file + rename).
void write_kv(const std::filesystem::path& path, const KeyValues& entries);
void write_text(const std::filesystem::path& path, const std::string& text);

std::string format_double(double v);  // round-trips exactly
std::string fnv_hex(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace duet
