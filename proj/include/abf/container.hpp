#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "abf/tensor.hpp"
#include "json.hpp"

// Binary container shared by model checkpoints and adversarial sets:
//   "ABF1" | u16 LE version | u64 LE header length | JSON header (UTF-8)
//   | f64 LE blobs | u32 LE CRC32 of every preceding byte
// The header lists each blob's shape in "blobs" and names the payload kind
// in "section" ("MODEL" or "ADVSET").
namespace abf::container {

inline constexpr std::uint16_t kVersion = 1;

struct Contents {
  nlohmann::json header;
  std::vector<Tensor> blobs;
};

std::vector<unsigned char> encode(nlohmann::json header, const std::vector<const Tensor*>& blobs,
                                  std::uint16_t version = kVersion);
Contents decode(const std::vector<unsigned char>& bytes);

// Writes via a temporary file and rename so a failed write leaves no partial file.
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file(const std::filesystem::path& path);

}  // namespace abf::container
