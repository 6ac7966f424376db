#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Minimal comma-separated tables: no quoting, fields never contain commas.
namespace abf::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; Error "malformed" if absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

std::vector<std::string> split(std::string_view line, char sep = ',');
Table parse(const std::string& text);  // Error "malformed" on ragged rows
std::optional<double> number(std::string_view field);  // empty -> nullopt; junk -> Error "malformed"

std::string read_text(const std::filesystem::path& path);
// Writes through a temporary file and rename.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace abf::csv
