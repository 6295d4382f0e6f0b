#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace macfx::util {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Plain comma-separated reader: no quoting, first line is the header.
CsvTable read_csv(const std::string& path);

double parse_double(const std::string& s);
int parse_int(const std::string& s);

/// Round-trip exact decimal rendering.
std::string format_double(double x);

std::string asset_name(int index);

/// FNV-1a over raw bytes, used for artifact checksums.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t h);
std::uint64_t file_checksum(const std::string& path);

}  // namespace macfx::util
