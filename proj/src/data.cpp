#include "abf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "abf/error.hpp"
#include "abf/rng.hpp"

namespace abf::data {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("io", "cannot read " + p.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, std::uint64_t seed) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(bounded(derive_seed(seed, {i}), i))]);
  return v;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes) {
  const auto ib = slurp(images), lb = slurp(labels);
  if (ib.size() < 4 || lb.size() < 4) throw FormatError("truncated", "IDX header truncated");
  if (be32(ib, 0) != 0x00000803)
    throw FormatError("wrong_magic", images.string() + ": wrong magic for an IDX image file");
  if (be32(lb, 0) != 0x00000801)
    throw FormatError("wrong_magic", labels.string() + ": wrong magic for an IDX label file");
  if (ib.size() < 16 || lb.size() < 8) throw FormatError("truncated", "IDX header truncated");
  const std::size_t n = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12), nl = be32(lb, 4);
  if (n != nl)
    throw FormatError("count_mismatch", std::to_string(n) + " images but " + std::to_string(nl) +
                                            " labels");
  if (n == 0 || h == 0 || w == 0) throw FormatError("truncated", "IDX file holds no samples");
  if (ib.size() - 16 < n * h * w) throw FormatError("truncated", images.string() + ": payload truncated");
  if (lb.size() - 8 < n) throw FormatError("truncated", labels.string() + ": payload truncated");

  Dataset d;
  d.classes = classes;
  d.inputs = Tensor({n, h * w});
  for (std::size_t i = 0; i < n * h * w; ++i) d.inputs[i] = static_cast<double>(ib[16 + i]) / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lb[8 + i];
    if (d.labels[i] >= classes)
      throw FormatError("bad_label", "label " + std::to_string(d.labels[i]) + " at index " +
                                         std::to_string(i) + " exceeds class count");
  }
  d.descriptor = images.filename().string();
  return d;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const Dataset& d, std::size_t height, std::size_t width) {
  if (d.inputs.sample_size() != height * width) throw ShapeError("write_idx: bad image size");
  std::ofstream fi(images, std::ios::binary), fl(labels, std::ios::binary);
  if (!fi || !fl) throw Error("io", "cannot write IDX files");
  put_be32(fi, 0x803);
  put_be32(fi, static_cast<std::uint32_t>(d.size()));
  put_be32(fi, static_cast<std::uint32_t>(height));
  put_be32(fi, static_cast<std::uint32_t>(width));
  for (double v : d.inputs.storage()) {
    const auto b = static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L));
    fi.put(static_cast<char>(b));
  }
  put_be32(fl, 0x801);
  put_be32(fl, static_cast<std::uint32_t>(d.size()));
  for (auto l : d.labels) fl.put(static_cast<char>(l));
}

std::vector<std::size_t> subsample_indices(const Dataset& d, std::size_t n, std::uint64_t seed,
                                           std::string* warning) {
  if (n > d.size())
    throw PreconditionError("subsample of " + std::to_string(n) + " from " +
                            std::to_string(d.size()) + " samples");
  std::vector<std::vector<std::size_t>> by_class(d.classes);
  for (std::size_t i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);

  std::vector<std::size_t> picked;
  const std::size_t c = d.classes;
  bool ok = true;
  for (std::size_t k = 0; k < c; ++k)
    if (by_class[k].size() < n / c + (k < n % c ? 1 : 0)) ok = false;
  if (ok) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t quota = n / c + (k < n % c ? 1 : 0);
      auto perm = shuffled(by_class[k], derive_seed(seed, {k}));
      picked.insert(picked.end(), perm.begin(), perm.begin() + static_cast<long>(quota));
    }
  } else {
    if (warning) *warning = "a class has too few samples for a stratified draw; drew uniformly";
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto perm = shuffled(all, derive_seed(seed, {c}));
    picked.assign(perm.begin(), perm.begin() + static_cast<long>(n));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed, std::string* warning) {
  const auto idx = subsample_indices(d, n, seed, warning);
  Dataset out = d.subset(idx);
  out.descriptor = d.descriptor + " n=" + std::to_string(n) + " seed=" + std::to_string(seed);
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& d, std::size_t n_test, std::uint64_t seed) {
  const auto test_idx = subsample_indices(d, n_test, seed);
  std::vector<char> in_test(d.size(), 0);
  for (auto i : test_idx) in_test[i] = 1;
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!in_test[i]) train_idx.push_back(i);
  Dataset train = d.subset(train_idx), test = d.subset(test_idx);
  train.split = "train";
  test.split = "test";
  const std::string tag = " split seed=" + std::to_string(seed);
  train.descriptor += tag;
  test.descriptor += tag;
  return {std::move(train), std::move(test)};
}

}  // namespace abf::data
