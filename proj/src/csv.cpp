#include "abf/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "abf/error.hpp"

namespace abf::csv {

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw FormatError("malformed", "csv has no column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const {
  for (const auto& h : header)
    if (h == name) return true;
  return false;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto at = line.find(sep, start);
    out.emplace_back(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

Table parse(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw FormatError("malformed", "csv line " + std::to_string(n) + " has " +
                                         std::to_string(fields.size()) + " fields, expected " +
                                         std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw FormatError("malformed", "csv is empty");
  return t;
}

std::optional<double> number(std::string_view f) {
  while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
  if (f.empty()) return std::nullopt;
  double v = 0.0;
  const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
  if (r.ec != std::errc() || r.ptr != f.data() + f.size())
    throw FormatError("malformed", "not a number: '" + std::string(f) + "'");
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("io", "cannot write " + path.string());
    f << text;
    if (!f) throw Error("io", "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace abf::csv
