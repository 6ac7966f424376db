#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "abf/attacks.hpp"
#include "abf/container.hpp"
#include "abf/error.hpp"
#include "abf/model_zoo.hpp"
#include "abf/rng.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace abf;
using namespace abf::zoo;

namespace {

// Three Gaussian blobs in [0,1]^16 (a 4x4 "image").
Dataset blobs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 0.08);
  Dataset d;
  d.classes = 3;
  d.inputs = Tensor({n, 16});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % 3;
    d.labels.push_back(k);
    for (std::size_t j = 0; j < 16; ++j) {
      const double centre = (j % 3 == k) ? 0.8 : 0.2;
      d.inputs[i * 16 + j] = std::clamp(centre + noise(gen), 0.0, 1.0);
    }
  }
  return d;
}

ModelSpec tiny_classifier() {
  ModelSpec s;
  s.name = "tiny";
  s.input_shape = {16};
  s.layers = {{.op = "dense", .units = 8}, {.op = "relu"}, {.op = "dense", .units = 3}};
  s.batch_size = 20;
  s.epochs = 8;
  s.optimizer.learning_rate = 0.01;
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "abf_zoo_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("model spec: validation and json round trip") {
  auto s = tiny_classifier();
  CHECK_NOTHROW(s.validate());
  CHECK(s.output_shape() == Shape{3});
  const auto back = ModelSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
  CHECK(back.hash() == s.hash());
  s.epochs = 0;
  CHECK_THROWS_AS(s.validate(), PreconditionError);
  s = tiny_classifier();
  s.batch_size = 0;
  CHECK_THROWS_AS(s.validate(), PreconditionError);
  s = tiny_classifier();
  s.optimizer.learning_rate = 0.0;
  CHECK_THROWS_AS(s.validate(), PreconditionError);
  s = tiny_classifier();
  s.layers.push_back({.op = "conv2d", .filters = 2});  // rank-1 input to a conv
  CHECK_THROWS_AS(s.validate(), ShapeError);
}

TEST_CASE("model spec: canonical architectures") {
  const auto clf = build(mnist_classifier_spec(), 1);
  CHECK(clf.graph.input_shape() == Shape{784});
  CHECK(clf.graph.output_shape() == Shape{10});
  CHECK(clf.params.total_values() == 784 * 128 + 128 + 128 * 10 + 10);
  CHECK(mnist_classifier_spec().batch_size == 200);
  CHECK(mnist_classifier_spec().epochs == 20);

  const auto dae_model = build(dae_spec(), 1);
  const std::size_t sizes[] = {784, 256, 128, 81, 128, 256, 784};
  std::size_t expected = 0;
  for (int i = 0; i + 1 < 7; ++i) expected += sizes[i] * sizes[i + 1] + sizes[i + 1];
  CHECK(dae_model.params.total_values() == expected);
  CHECK(dae_encoder(dae_model).graph.output_shape() == Shape{81});

  const auto ae = build(compression_ae_spec(), 1);
  CHECK(ae.params.total_values() == 784 * 81 + 81 + 81 * 784 + 784);
  CHECK(compression_encoder(ae).graph.output_shape() == Shape{81});
}

TEST_CASE("train: fits separable blobs, reproducibly, with non-increasing loss") {
  const auto d = blobs(300, 1);
  const auto data = TrainData::classification(d);
  const auto a = train(tiny_classifier(), data, 42);
  const auto b = train(tiny_classifier(), data, 42);
  CHECK(a.model.params == b.model.params);
  CHECK(a.provenance.epoch_losses == b.provenance.epoch_losses);
  REQUIRE(a.provenance.epoch_losses.size() == 8);
  for (std::size_t e = 1; e < 8; ++e)
    CHECK(a.provenance.epoch_losses[e] <= a.provenance.epoch_losses[e - 1] * 1.05);
  CHECK(a.provenance.train_metric >= 0.95);
  CHECK(a.provenance.metric == "accuracy");
  CHECK(a.provenance.spec_hash == a.spec.hash());
  CHECK(a.provenance.train_seconds > 0.0);
  CHECK(accuracy(a.model, d.inputs, d.labels) == doctest::Approx(a.provenance.train_metric));
}

TEST_CASE("train: every optimizer reduces the loss") {
  const auto data = TrainData::classification(blobs(120, 2));
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::rmsprop}) {
    auto s = tiny_classifier();
    s.optimizer.kind = kind;
    s.optimizer.learning_rate = kind == OptimizerKind::sgd ? 0.2 : 0.01;
    s.optimizer.momentum = kind == OptimizerKind::sgd ? 0.5 : 0.0;
    const auto t = train(s, data, 3);
    CHECK(t.provenance.epoch_losses.back() < t.provenance.epoch_losses.front());
  }
}

TEST_CASE("train: divergence aborts with the epoch index") {
  auto s = tiny_classifier();
  s.loss = ad::LossKind::mse;
  s.layers = {{.op = "dense", .units = 16}};  // linear least squares blows up under a huge step
  s.optimizer.kind = OptimizerKind::sgd;
  s.optimizer.learning_rate = 1e10;
  const auto d = blobs(60, 3);
  try {
    train(s, TrainData::autoencoding(d.inputs), 1);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch < s.epochs);
    CHECK(e.kind() == "divergence");
  }
}

TEST_CASE("train: an autoencoder beats its untrained initialisation") {
  ModelSpec s;
  s.name = "tiny-ae";
  s.input_shape = {16};
  s.layers = {{.op = "dense", .units = 6}, {.op = "relu"}, {.op = "dense", .units = 16}, {.op = "sigmoid"}};
  s.loss = ad::LossKind::mse;
  s.batch_size = 20;
  s.epochs = 30;
  s.optimizer.learning_rate = 0.01;
  const auto train_set = blobs(300, 4), test_set = blobs(90, 5);
  const auto untrained = build(s, derive_seed(9, {0}));
  const auto t = train(s, TrainData::autoencoding(train_set.inputs), 9);
  const double before = mean_squared_error(untrained, test_set.inputs, test_set.inputs);
  const double after = mean_squared_error(t.model, test_set.inputs, test_set.inputs);
  CHECK(after < before);
  const Tensor out = predict(t.model, test_set.inputs);
  for (double v : out.storage()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("checkpoint: round trip reproduces logits bit for bit") {
  const auto t = train(tiny_classifier(), TrainData::classification(blobs(90, 6)), 5);
  const auto path = scratch("model.abf");
  save(t, path);
  const auto back = load(path);
  const Tensor x = testing::random_tensor({100, 16}, 7, 0.0, 1.0);
  CHECK(predict(back.model, x) == predict(t.model, x));
  CHECK(back.spec.hash() == t.spec.hash());
  CHECK(back.provenance.epoch_losses == t.provenance.epoch_losses);
  for (const auto& name : t.model.params.names())
    CHECK(back.model.params.at(name).trainable == t.model.params.at(name).trainable);
}

TEST_CASE("checkpoint: corruption, truncation and version errors") {
  const auto t = train(tiny_classifier(), TrainData::classification(blobs(30, 6)), 5);
  const auto path = scratch("model2.abf");
  save(t, path);
  auto bytes = container::read_file(path);

  auto expect_kind = [](const std::vector<unsigned char>& b, const std::string& kind) {
    try {
      container::decode(b);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.kind() == kind);
    }
  };
  auto truncated = bytes;
  truncated.resize(bytes.size() - 37);
  expect_kind(truncated, "checksum_mismatch");
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  expect_kind(flipped, "checksum_mismatch");
  auto magic = bytes;
  magic[0] = 'X';
  expect_kind(magic, "bad_magic");

  const auto c = container::decode(bytes);
  std::vector<const Tensor*> blobs;
  for (const auto& b : c.blobs) blobs.push_back(&b);
  expect_kind(container::encode(c.header, blobs, container::kVersion + 1), "version_mismatch");

  // Writing a truncated file and loading it fails the same way.
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(truncated.data()), static_cast<std::streamsize>(truncated.size()));
  }
  CHECK_THROWS_AS(load(path), FormatError);
  CHECK_THROWS_AS(load(scratch("does_not_exist.abf")), Error);
}

TEST_CASE("checkpoint: empty blob list and header survive encode/decode") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto bytes = container::encode({{"section", "MODEL"}, {"x", 1}}, {&a});
  const auto c = container::decode(bytes);
  CHECK(c.header.at("x") == 1);
  CHECK(c.blobs.size() == 1);
  CHECK(c.blobs[0] == a);
}

TEST_CASE("dae training set: degenerate and full mixes") {
  const auto d = blobs(60, 8);
  const auto clean = make_dae_training_set(d, {}, 0.0, 1);
  CHECK(clean.data.inputs == d.inputs);
  CHECK(clean.data.targets == d.inputs);
  for (int g : clean.generator) CHECK(g == -1);
  CHECK_THROWS_AS(make_dae_training_set(d, {}, 0.5, 1), PreconditionError);

  // FGS at epsilon 1.5 against a trained victim: every pair differs by 1.5.
  const auto victim_model = train(tiny_classifier(), TrainData::classification(d), 2);
  const attacks::VictimSystem victim{"clf", victim_model.model};
  const attacks::CompositeVictim composite({&victim});
  auto spec = attacks::AttackSpec::defaults_for(attacks::Algorithm::fgs);
  spec.fgs_epsilon = 1.5;
  AttackGenerator fgs{"FGS", [&](const Tensor& x, std::span<const std::size_t> y) {
                        return attacks::fgs(composite, x, y, spec).adversarial;
                      }};
  const auto full = make_dae_training_set(d, {fgs}, 1.0, 3);
  CHECK(full.data.targets == d.inputs);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(full.generator[i] == 0);
    CHECK(l2_distance(full.data.inputs.row(i), d.inputs.row(i)) == doctest::Approx(1.5).epsilon(1e-6));
  }
}

TEST_CASE("dae training set: three generators share the perturbed samples") {
  const auto d = blobs(1000, 9);
  auto shift = [](double by) {
    return [by](const Tensor& x, std::span<const std::size_t>) {
      Tensor out = x;
      for (auto& v : out.storage()) v = std::clamp(v + by, 0.0, 1.0);
      return out;
    };
  };
  const std::vector<AttackGenerator> gens{{"a", shift(0.1)}, {"b", shift(-0.1)}, {"c", shift(0.05)}};
  const auto set = make_dae_training_set(d, gens, 1.0, 4);
  std::size_t counts[3] = {0, 0, 0}, perturbed = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    REQUIRE(set.generator[i] >= 0);
    ++counts[set.generator[i]];
    if (!(set.data.inputs.row(i)[0] == d.inputs.row(i)[0] && set.data.inputs.row(i)[1] == d.inputs.row(i)[1]))
      ++perturbed;
  }
  CHECK(std::abs(static_cast<double>(perturbed) / 1000.0 - 1.0) <= 0.02);
  for (auto c : counts) CHECK((c >= 333 && c <= 334));

  const auto half = make_dae_training_set(d, gens, 0.5, 4);
  std::size_t n_half = 0;
  for (int g : half.generator) n_half += g >= 0;
  CHECK(std::abs(static_cast<double>(n_half) / 1000.0 - 0.5) <= 0.05);
}

TEST_CASE("reduced classifier: retrain on compressed inputs") {
  const auto d = blobs(240, 10);
  ad::ModelBuilder cb({16}, 3);
  cb.dense(4).relu();
  const auto compressor = std::move(cb).build();
  ReducedClassifierRecipe r;
  r.method = ReductionMethod::retrain;
  r.compressor = &compressor;
  r.reduced_input_shape = {4};
  const TrainedModel source = train(tiny_classifier(), TrainData::classification(d), 1);
  r.source = &source;
  const auto t = derive_reduced_classifier(r, d, 2);
  CHECK(t.model.graph.input_shape() == Shape{4});
  CHECK(t.provenance.epoch_losses.size() == source.spec.epochs);
  CHECK(t.provenance.note == "retrain");

  r.reduced_input_shape = {5};
  try {
    derive_reduced_classifier(r, d, 2);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4]") != std::string::npos);
    CHECK(msg.find("[5]") != std::string::npos);
  }
}

TEST_CASE("reduced classifier: upsample method freezes all but the first layer") {
  const auto d = blobs(240, 11);
  const TrainedModel source = train(tiny_classifier(), TrainData::classification(d), 1);
  ad::ModelBuilder cb({16}, 3);
  cb.dense(4).sigmoid();
  const auto compressor = std::move(cb).build();
  ReducedClassifierRecipe r;
  r.method = ReductionMethod::upsample;
  r.source = &source;
  r.compressor = &compressor;
  r.reduced_input_shape = {4};  // [1,2,2] upsampled to [1,4,4]
  r.epochs = 3;
  const auto t = derive_reduced_classifier(r, d, 5);
  CHECK(t.model.graph.input_shape() == Shape{4});
  bool first_changed = false;
  for (const auto& name : source.model.params.names()) {
    const auto& before = source.model.params.at(name).value;
    const auto& after = t.model.params.at(name).value;
    if (name.rfind("L0/", 0) == 0) {
      first_changed = first_changed || !(before == after);
    } else {
      CHECK(before == after);
      CHECK_FALSE(t.model.params.at(name).trainable);
    }
  }
  CHECK(first_changed);

  r.adapter = true;
  const auto adapted = derive_reduced_classifier(r, d, 5);
  for (const auto& name : source.model.params.names())
    CHECK(adapted.model.params.at(name).value == source.model.params.at(name).value);
  CHECK(adapted.model.params.at("adapter.W").trainable);

  r.adapter = false;
  r.reduced_input_shape = {9};
  ad::ModelBuilder bad({16}, 3);
  bad.dense(9);
  const auto wide = std::move(bad).build();
  r.compressor = &wide;
  CHECK_THROWS_AS(derive_reduced_classifier(r, d, 5), ShapeError);
}

TEST_CASE("helpers: argmax ties pick the lowest index") {
  const Tensor z({2, 3}, {1.0, 3.0, 3.0, 2.0, 2.0, 2.0});
  CHECK(argmax_rows(z) == std::vector<std::size_t>{1, 0});
}
