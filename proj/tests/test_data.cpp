#include <filesystem>
#include <fstream>

#include "abf/data.hpp"
#include "abf/error.hpp"
#include "doctest.h"

using namespace abf;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "abf_data_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Two 2x2 images and their labels.
std::vector<unsigned char> images_fixture() {
  return {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 51, 102, 255, 255, 0, 0, 0};
}
std::vector<unsigned char> labels_fixture() { return {0, 0, 8, 1, 0, 0, 0, 2, 7, 3}; }

Dataset labelled(const std::vector<std::size_t>& labels) {
  Dataset d;
  d.inputs = Tensor({labels.size(), 1});
  for (std::size_t i = 0; i < labels.size(); ++i) d.inputs[i] = static_cast<double>(i);
  d.labels = labels;
  return d;
}

}  // namespace

TEST_CASE("idx: hand-built fixture loads and scales to [0,1]") {
  write_bytes(scratch("img"), images_fixture());
  write_bytes(scratch("lbl"), labels_fixture());
  const auto d = data::load_idx(scratch("img"), scratch("lbl"));
  CHECK(d.inputs.shape() == Shape{2, 4});
  CHECK(d.inputs[1] == doctest::Approx(0.2));
  CHECK(d.inputs[3] == 1.0);
  CHECK(d.inputs[4] == 1.0);
  CHECK(d.labels == std::vector<std::size_t>{7, 3});

  data::write_idx(scratch("img2"), scratch("lbl2"), d, 2, 2);
  const auto back = data::load_idx(scratch("img2"), scratch("lbl2"));
  CHECK(back.inputs == d.inputs);
  CHECK(back.labels == d.labels);
}

TEST_CASE("idx: malformed files raise typed errors") {
  auto expect = [](const std::vector<unsigned char>& img, const std::vector<unsigned char>& lbl,
                   const std::string& kind) {
    write_bytes(scratch("bad_img"), img);
    write_bytes(scratch("bad_lbl"), lbl);
    try {
      data::load_idx(scratch("bad_img"), scratch("bad_lbl"));
      FAIL("expected " << kind);
    } catch (const FormatError& e) {
      CHECK(e.kind() == kind);
    }
  };
  auto img = images_fixture();
  img[3] = 1;
  expect(img, labels_fixture(), "wrong_magic");
  img = images_fixture();
  img.pop_back();
  expect(img, labels_fixture(), "truncated");
  auto lbl = labels_fixture();
  lbl[7] = 3;
  lbl.push_back(1);
  expect(images_fixture(), lbl, "count_mismatch");
  lbl = labels_fixture();
  lbl[9] = 10;
  expect(images_fixture(), lbl, "bad_label");
  CHECK_THROWS_AS(data::load_idx(scratch("missing"), scratch("missing2")), Error);
}

TEST_CASE("subsample: equal class quotas, sorted, deterministic") {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 300; ++i) labels.push_back((i * 7) % 10);
  const auto d = labelled(labels);
  const auto idx = data::subsample_indices(d, 53, 4);
  CHECK(idx.size() == 53);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  std::vector<std::size_t> per(10, 0);
  for (auto i : idx) ++per[labels[i]];
  for (std::size_t k = 0; k < 10; ++k) CHECK(per[k] == (k < 3 ? 6u : 5u));
  CHECK(data::subsample_indices(d, 53, 4) == idx);
  CHECK(data::subsample_indices(d, 53, 5) != idx);
  CHECK_THROWS_AS(data::subsample_indices(d, 301, 1), PreconditionError);
}

TEST_CASE("subsample: falls back to a uniform draw with a warning") {
  std::vector<std::size_t> labels(40, 0);
  labels[0] = 1;
  auto d = labelled(labels);
  d.classes = 2;
  std::string warning;
  const auto idx = data::subsample_indices(d, 10, 1, &warning);
  CHECK(idx.size() == 10);
  CHECK_FALSE(warning.empty());
}

TEST_CASE("split: disjoint stratified partition") {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 100; ++i) labels.push_back(i % 10);
  const auto d = labelled(labels);
  const auto [train, test] = data::split(d, 20, 3);
  CHECK(train.size() == 80);
  CHECK(test.size() == 20);
  CHECK(test.class_counts() == std::vector<std::size_t>(10, 2));
  std::vector<double> all;
  for (double v : train.inputs.storage()) all.push_back(v);
  for (double v : test.inputs.storage()) all.push_back(v);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(all[i] == static_cast<double>(i));
  CHECK(train.split == "train");
  CHECK(test.split == "test");
}
