#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "abf/dataset.hpp"

namespace abf::data {

// Big-endian IDX: images magic 0x00000803 [N,H,W] u8, labels magic
// 0x00000801 [N] u8. Pixels are divided by 255. Inputs come back flattened
// to [N, H*W]. Errors: FormatError kinds "wrong_magic", "truncated",
// "count_mismatch", "bad_label"; Error kind "io" for unreadable files.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 10);
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const Dataset& d, std::size_t height, std::size_t width);

// Equal per-class quotas (remainder to the lowest classes), chosen by a
// seeded counter-based shuffle within each class; output keeps the original
// order. Falls back to a uniform draw when a class is too small, setting
// `*warning`.
std::vector<std::size_t> subsample_indices(const Dataset& d, std::size_t n, std::uint64_t seed,
                                           std::string* warning = nullptr);
Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed,
                  std::string* warning = nullptr);

// Stratified held-out draw of `n_test` samples; the rest is the train split.
std::pair<Dataset, Dataset> split(const Dataset& d, std::size_t n_test, std::uint64_t seed);

}  // namespace abf::data
