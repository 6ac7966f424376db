#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "abf/attacks.hpp"
#include "abf/graph.hpp"

namespace abf::defense {

enum class DefenseKind { none, dae, cascade, hl, ae };
inline constexpr std::array<DefenseKind, 5> kAllKinds = {DefenseKind::none, DefenseKind::dae,
                                                          DefenseKind::cascade, DefenseKind::hl,
                                                          DefenseKind::ae};

std::string kind_name(DefenseKind k);     // "none", "dae", "cascade", "hl", "ae"
std::string display_name(DefenseKind k);  // "None", "DAE", "Cascade", "Hidden Layer", "AE"
// Accepts either spelling, case-insensitively.
DefenseKind kind_from(std::string_view name);

enum class ClassifierVariant { full, ae_reduced, dae_reduced };
std::string variant_name(ClassifierVariant v);  // component name used in errors

struct ClassifierBank {
  const ad::Model* full = nullptr;
  const ad::Model* ae_reduced = nullptr;
  const ad::Model* dae_reduced = nullptr;

  // Throws MissingComponentError naming the variant.
  const ad::Model& get(ClassifierVariant v) const;
};

// Trained infrastructure. The DAE and compression AE are full autoencoders;
// pipelines take the halves they need.
struct Components {
  const ad::Model* dae = nullptr;
  const ad::Model* compression_ae = nullptr;
  ClassifierBank classifiers;
};

struct Stage {
  std::string name;  // "dae", "dae_encoder", "compression_encoder"
  ad::Model model;
};

struct DefensePipeline {
  DefenseKind kind = DefenseKind::none;
  std::vector<Stage> stages;
  ClassifierVariant variant = ClassifierVariant::full;
  Shape input_shape;
  Shape output_shape;  // equals the classifier variant's input shape
};

// Resolves and shape-checks every stage and the classifier variant.
DefensePipeline build_pipeline(DefenseKind kind, const Components& components);

Tensor apply(const DefensePipeline& pipeline, const Tensor& batch);
std::vector<std::size_t> classify(const DefensePipeline& pipeline, const ClassifierBank& bank,
                                  const Tensor& batch);
double accuracy(const DefensePipeline& pipeline, const ClassifierBank& bank, const Dataset& data);

// Stages and classifier composed into one differentiable graph.
attacks::VictimSystem victim_system(const DefensePipeline& pipeline, const ClassifierBank& bank);

struct Repertoire {
  std::vector<DefensePipeline> pipelines;
  std::uint64_t seed = 0;

  void validate() const;  // non-empty, unique kinds
  const DefensePipeline& find(DefenseKind k) const;
};

// Uniform over the repertoire, keyed by (seed, sample_index).
DefenseKind random_select(const Repertoire& repertoire, std::size_t sample_index);

}  // namespace abf::defense
