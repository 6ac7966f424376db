#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abf/autodiff.hpp"
#include "abf/dataset.hpp"
#include "json.hpp"

namespace abf::zoo {

using nlohmann::json;

struct LayerSpec {
  std::string op;  // autodiff op name, or "flatten"
  std::size_t units = 0;
  std::size_t filters = 0;
  std::size_t kernel = 3;
  bool same_padding = true;
  double rate = 0.0;
  Shape target;
};

enum class OptimizerKind { sgd, adam, rmsprop };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;        // RMSProp
  double momentum = 0.0;   // SGD
  double epsilon = 1e-7;
  double decay = 0.0;      // lr / (1 + decay * step)
};

// Each dense or conv2d layer starts a new layer index; the activations that
// follow it belong to the same index ("first layer" = index 0).
struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;
  ad::LossKind loss = ad::LossKind::cross_entropy;
  OptimizerSpec optimizer;
  std::size_t batch_size = 200;
  std::size_t epochs = 10;

  void validate() const;  // throws PreconditionError / ShapeError
  Shape output_shape() const;
  json to_json() const;
  static ModelSpec from_json(const json& j);
  std::string hash() const;  // FNV-1a 64 over the canonical JSON, hex
};

ad::Model build(const ModelSpec& spec, std::uint64_t seed);

struct Provenance {
  std::string spec_hash;
  std::uint64_t seed = 0;
  double train_seconds = 0.0;
  std::vector<double> epoch_losses;
  std::string metric;  // "accuracy" or "mse"
  double train_metric = 0.0;
  std::optional<double> test_metric;
  std::string note;
};

struct TrainedModel {
  ModelSpec spec;
  ad::Model model;
  Provenance provenance;
};

// Supervision for train(): labels for cross-entropy, targets for MSE.
struct TrainData {
  Tensor inputs;
  std::vector<std::size_t> labels;
  Tensor targets;

  std::size_t size() const { return inputs.batch(); }
  static TrainData classification(const Dataset& d) { return {d.inputs, d.labels, {}}; }
  static TrainData autoencoding(const Tensor& x) { return {x, {}, x}; }
};

struct TrainOptions {
  const TrainData* test = nullptr;               // evaluated once after training
  std::function<void(std::size_t, double)> on_epoch;  // (epoch, mean loss)
};

TrainedModel train(const ModelSpec& spec, const TrainData& data, std::uint64_t seed,
                   const TrainOptions& options = {});
// Continues training `model` in place (trainable parameters only).
void fit(ad::Model& model, const ModelSpec& recipe, const TrainData& data, std::uint64_t seed,
         Provenance& provenance, const TrainOptions& options = {});

// Batched evaluation helpers.
Tensor predict(const ad::Model& model, const Tensor& inputs, std::size_t batch = 500);
std::vector<std::size_t> argmax_rows(const Tensor& logits);
double accuracy(const ad::Model& model, const Tensor& inputs,
                std::span<const std::size_t> labels);
double mean_squared_error(const ad::Model& model, const Tensor& inputs, const Tensor& targets);

// Canonical desk-scale specs for 28x28 grey images.
ModelSpec mnist_classifier_spec();    // FC 784-128-10, ReLU
ModelSpec dae_spec();                 // FC 784-256-128-81-128-256-784, sigmoid output only
ModelSpec compression_ae_spec();      // FC 784-81(ReLU)-784(sigmoid)

// Bottleneck halves of the canonical autoencoders.
ad::Model dae_encoder(const ad::Model& dae);         // 784 -> 81, linear
ad::Model compression_encoder(const ad::Model& ae);  // 784 -> 81, ReLU

struct AttackGenerator {
  std::string name;
  std::function<Tensor(const Tensor& x, std::span<const std::size_t> y)> run;
};

struct DaeTrainingSet {
  TrainData data;              // inputs possibly perturbed, targets always clean
  std::vector<int> generator;  // per sample: -1 clean, else index into the generator list
};

// Each sample is perturbed with probability `mix_ratio` (counter-based draw
// keyed by seed and index); perturbed samples are dealt round-robin to the
// generators.
DaeTrainingSet make_dae_training_set(const Dataset& clean,
                                     const std::vector<AttackGenerator>& generators,
                                     double mix_ratio, std::uint64_t seed);

enum class ReductionMethod { retrain, upsample };

struct ReducedClassifierRecipe {
  ReductionMethod method = ReductionMethod::retrain;
  const TrainedModel* source = nullptr;  // required for upsample; its spec is the retrain template
  const ad::Model* compressor = nullptr;
  Shape reduced_input_shape;
  // Upsample only: train a dense adapter in front of the upsample and keep
  // every source parameter frozen, instead of retraining the first layer.
  bool adapter = false;
  std::optional<std::size_t> epochs;  // overrides the source recipe
};

TrainedModel derive_reduced_classifier(const ReducedClassifierRecipe& recipe,
                                       const Dataset& dataset, std::uint64_t seed,
                                       const TrainData* test = nullptr);

// Applies `compressor` to every row of `inputs`.
Tensor compress(const ad::Model& compressor, const Tensor& inputs);

// Graph and parameter (de)serialisation, shared with the adversarial-set container.
json graph_to_json(const ad::Graph& graph);
ad::Graph graph_from_json(const json& j);

void save(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load(const std::filesystem::path& path);

}  // namespace abf::zoo
