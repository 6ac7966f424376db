#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "abf/autodiff.hpp"
#include "abf/dataset.hpp"
#include "json.hpp"

namespace abf::attacks {

enum class Algorithm { fgs, pgd, cw, deepfool };
std::string algorithm_name(Algorithm a);  // "FGS", "PGD", "CW", "DF"
Algorithm algorithm_from(std::string_view name);

struct AttackSpec {
  Algorithm algorithm = Algorithm::fgs;
  double lo = 0.0, hi = 1.0;  // clip range
  std::uint64_t seed = 0;

  // FGS
  double fgs_epsilon = 1.5;
  bool fgs_sign = false;         // coordinate-sign variant, for cross-checks only
  bool fgs_clip_aware = true;    // rescale so the clipped perturbation keeps norm epsilon
  // PGD
  double pgd_epsilon = 0.25;
  double pgd_step = 0.01;
  std::size_t pgd_iterations = 60;
  bool pgd_early_stop = false;
  // CW
  std::size_t cw_binary_steps = 5;
  std::size_t cw_max_iterations = 400;
  double cw_learning_rate = 0.01;
  double cw_initial_const = 0.01;
  bool cw_abort_early = true;
  std::size_t cw_abort_window = 40;
  std::size_t cw_restarts = 1;
  std::size_t cw_batch_size = 8;
  double cw_confidence = 0.0;
  // DF
  std::size_t df_max_iterations = 50;
  double df_overshoot = 0.02;
  bool df_squared_norm_argmin = false;  // argmin over |f'|/||w'||^2 instead of |f'|/||w'||

  void validate() const;
  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);
  static AttackSpec defaults_for(Algorithm a);
};

// A victim system: defense stages composed with a classifier into one graph
// whose output is class logits.
struct VictimSystem {
  std::string name;
  ad::Model model;
};

// Averaging composite for adaptive attacks. Gradients of the loss are taken
// per system and averaged; logits (for CW and DeepFool) are averaged too, so
// the averaged-logit Jacobian equals the mean of member Jacobians.
class CompositeVictim {
 public:
  explicit CompositeVictim(std::vector<const VictimSystem*> systems);

  std::size_t size() const { return systems_.size(); }
  const VictimSystem& system(std::size_t i) const { return *systems_[i]; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t classes() const { return classes_; }

  struct Evaluation {
    std::vector<ad::Trace> traces;  // one per system
    Tensor logits;                  // mean over systems, [N, K]
  };
  Evaluation evaluate(const Tensor& x) const;
  Tensor logits(const Tensor& x) const;
  // Vector-Jacobian product of the mean logits with `weights` [N, K].
  Tensor vjp(const Evaluation& e, const Tensor& weights) const;
  // Rows d(mean Z_k)/dx for every class k, each [N, sample...].
  std::vector<Tensor> jacobian(const Evaluation& e) const;
  // Mean over systems of d(sum_n CE(Z(x_n), y_n))/dx, i.e. per-sample gradients.
  Tensor loss_gradient(const Tensor& x, std::span<const std::size_t> y) const;
  std::vector<std::vector<std::size_t>> per_system_predictions(const Tensor& x) const;

 private:
  std::vector<const VictimSystem*> systems_;
  Shape input_shape_;
  std::size_t classes_ = 0;
};

Tensor adaptive_gradient(const CompositeVictim& composite, const Tensor& x,
                         std::span<const std::size_t> y);

// In place: z <- epsilon * z / max(epsilon, ||z||).
void project_l2(std::span<double> z, double epsilon);

struct SampleResult {
  bool null_gradient = false;
  bool attack_failed = false;
  bool budget_unreachable = false;  // FGS: clip range cannot absorb epsilon
  std::size_t iterations = 0;
  std::string error;
};

struct AttackOutput {
  Tensor adversarial;
  std::vector<SampleResult> samples;
};

AttackOutput fgs(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y,
                 const AttackSpec& spec);
AttackOutput pgd(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y,
                 const AttackSpec& spec);
// `first_index` is the dataset index of row 0; it keys the per-sample restart noise.
AttackOutput cw(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y,
                const AttackSpec& spec, std::size_t first_index = 0);
AttackOutput deepfool(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y,
                      const AttackSpec& spec);
AttackOutput run(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y,
                 const AttackSpec& spec, std::size_t first_index = 0);

// CW hinge: max(Z_y - max_{i != y} Z_i + confidence, 0).
double cw_margin(std::span<const double> logits, std::size_t label, double confidence = 0.0);

struct SampleMeta {
  std::size_t sample_id = 0;
  double l2_norm = 0.0;
  bool success = false;  // composite prediction differs from the label
  std::vector<std::size_t> predicted;  // per victim system
  SampleResult result;
};

struct AttackSet {
  AttackSpec spec;
  std::vector<std::string> victims;
  Tensor adversarial;
  std::vector<std::size_t> labels;
  std::vector<SampleMeta> meta;
};

// One adversarial sample per input. Errors raised for a batch are retried
// per sample; a failing sample keeps its clean input and records the error.
AttackSet generate_attack_set(const AttackSpec& spec, const CompositeVictim& composite,
                              const Dataset& dataset, std::size_t batch = 100);

void save_attack_set(const AttackSet& set, const std::filesystem::path& path);
AttackSet load_attack_set(const std::filesystem::path& path);
// sample_id, algorithm, l2_norm, success, predicted_class (";"-joined per victim)
void write_metadata_csv(const AttackSet& set, const std::filesystem::path& path);

}  // namespace abf::attacks
