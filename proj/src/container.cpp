#include "abf/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "abf/error.hpp"

namespace abf::container {

namespace {

constexpr unsigned char kMagic[4] = {'A', 'B', 'F', '1'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode(nlohmann::json header, const std::vector<const Tensor*>& blobs,
                                  std::uint16_t version) {
  auto shapes = nlohmann::json::array();
  for (const Tensor* t : blobs) shapes.push_back(t->shape());
  header["blobs"] = shapes;
  const std::string text = header.dump();

  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, version);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const Tensor* t : blobs)
    for (double v : t->storage()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  put_le<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

Contents decode(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("bad_magic", "not an ABF1 container");
  if (bytes.size() < 6) throw FormatError("checksum_mismatch", "container truncated");
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kVersion)
    throw FormatError("version_mismatch", "container format version " + std::to_string(version) +
                                              " is not supported (expected " +
                                              std::to_string(kVersion) + ")");
  if (bytes.size() < 4 + 2 + 8 + 4) throw FormatError("checksum_mismatch", "container truncated");
  const std::size_t body = bytes.size() - 4;
  if (crc_of(bytes.data(), body) != get_le<std::uint32_t>(bytes.data() + body))
    throw FormatError("checksum_mismatch", "container checksum mismatch (corrupt or truncated)");

  const auto header_len = get_le<std::uint64_t>(bytes.data() + 6);
  if (header_len > body - 14) throw FormatError("malformed", "header length exceeds file");
  Contents c;
  const char* text = reinterpret_cast<const char*>(bytes.data() + 14);
  try {
    c.header = nlohmann::json::parse(text, text + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed", std::string("container header: ") + e.what());
  }
  std::size_t pos = 14 + header_len;
  for (const auto& s : c.header.at("blobs")) {
    const Shape shape = s.get<Shape>();
    const std::size_t n = numel(shape);
    if ((body - pos) / 8 < n) throw FormatError("malformed", "blob exceeds file");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i, pos += 8)
      data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + pos));
    c.blobs.emplace_back(shape, std::move(data));
  }
  if (pos != body) throw FormatError("malformed", "trailing bytes after blobs");
  return c;
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("io", "cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
      f.close();
      std::filesystem::remove(tmp);
      throw Error("io", "write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot read " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

}  // namespace abf::container
