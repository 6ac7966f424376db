#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abf/metrics.hpp"

namespace abf::planner {

using defense::DefenseKind;

// The AE component bundles the compression autoencoder with the AE-reduced classifier.
enum class Component { clf, dae, ae, dae_red_clf };
std::string component_name(Component c);  // "clf", "dae", "ae", "dae_red_clf"
Component component_from(std::string_view name);

struct TrainingOrder {
  int id = 0;
  std::array<Component, 4> sequence{};
};

// Ids 0-17: grouped by root clf, dae, ae; within a root, the remaining three
// components in lexicographic permutation order of the root's base sequence.
std::vector<TrainingOrder> enumerate_orders();

enum class Rule { kept, dependency, root_swap, no_classifier, greedy_unlock };
std::string rule_name(Rule r);  // "", "R1", "R2", "R3", "R4"
std::string rule_reason(Rule r);

struct PruneResult {
  std::vector<TrainingOrder> survivors;  // sorted by id
  std::map<int, Rule> eliminated;
};
PruneResult prune(const std::vector<TrainingOrder>& orders);

// Defenses usable once `trained` components exist, in kind order.
std::vector<DefenseKind> available_defenses(const std::vector<Component>& trained);

struct CostModel {
  double classifier_full = 42.13;
  double classifier_reduced = 15.46;
  double dae = 300.0;
  double ae = 60.0;

  void validate() const;  // all > 0
  double cost(Component c) const;
  // network,seconds with rows classifier_full, classifier_reduced, dae, ae.
  static CostModel read_csv(const std::filesystem::path& path);
  static CostModel from_csv(const std::string& text);
};

struct Step {
  Component component = Component::clf;
  double cumulative_seconds = 0.0;
  std::vector<DefenseKind> added;
  std::vector<DefenseKind> available;
  std::optional<double> avg_accuracy;
};

struct Schedule {
  TrainingOrder order;
  std::vector<Step> steps;
};

// Average accuracy after a step is the mean, over available defenses e, of
// matrix[attacked = all available][deployed = e]. Absent without a matrix or row.
Schedule schedule(const TrainingOrder& order, const CostModel& cost,
                  const metrics::AccuracyMatrix* matrix = nullptr);

struct Ranked {
  int order_id = 0;
  std::size_t steps_completed = 0;
  double completion_seconds = 0.0;
  std::optional<double> avg_accuracy;
};

struct Recommendation {
  std::vector<Ranked> ranking;
  std::string diagnostic;  // set when nothing fits the budget
};

// Ranks by average accuracy at the last step finished within the budget
// (absent accuracies last), then earlier completion, then id.
Recommendation recommend(const std::vector<TrainingOrder>& survivors, const CostModel& cost,
                         const metrics::AccuracyMatrix* matrix, double budget_seconds);

// order_id, step, component, cumulative_seconds, defenses_added, avg_accuracy
std::string plan_csv(const std::vector<Schedule>& schedules);

}  // namespace abf::planner
