#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abf/attacks.hpp"
#include "abf/dataset.hpp"
#include "abf/defenses.hpp"
#include "abf/metrics.hpp"
#include "abf/model_zoo.hpp"
#include "abf/planner.hpp"
#include "json.hpp"

namespace abf::harness {

using defense::DefenseKind;
using Log = std::function<void(const std::string&)>;

// ------------------------------------------------------------ fixtures

// Published accuracy/robustness table: attacked_set, acc_<e>..., r_<e>..., lower_bound.
struct ReferenceTable {
  std::string name;
  metrics::AccuracyMatrix matrix;
  std::vector<DefenseKind> columns;
  std::map<std::string, std::vector<std::optional<double>>> robustness;  // by set key
  std::map<std::string, std::optional<double>> lower_bound;
};
ReferenceTable read_reference_table(const std::filesystem::path& path);

struct Check {
  std::string what;
  double expected = 0.0;
  double computed = 0.0;
  double tolerance = 0.0;
  bool ok = false;
};

struct Verification {
  std::vector<Check> checks;
  std::vector<std::string> problems;  // structural mismatches (blank vs defined, missing rows)
  bool ok() const;
  std::size_t failures() const;
  double max_error() const;
  void merge(const Verification& other);
};

// Recomputes every r_e(D) and lower bound from the accuracy cells.
Verification verify_reference_table(const ReferenceTable& table, double tolerance = 0.02);
// Recomputes the shipped schedules from the cost table and matrix.
Verification verify_schedules(const std::filesystem::path& schedules_csv, const planner::CostModel& cost,
                              const metrics::AccuracyMatrix& matrix, double time_tolerance = 1e-9,
                              double accuracy_tolerance = 0.01);
// All tables in `dir`, the schedules against fashion_cw.csv, and the survivor set.
Verification verify_fixtures(const std::filesystem::path& dir);

// -------------------------------------------------------------- config

struct DeskConfig {
  std::filesystem::path images, labels;
  std::size_t test_size = 1000;
  std::size_t eval_size = 200;
  std::uint64_t seed = 1;

  std::size_t classifier_epochs = 20;
  std::size_t dae_epochs = 30;
  std::size_t ae_epochs = 30;
  std::size_t reduced_epochs = 20;
  double dae_mix_ratio = 0.5;
  std::size_t dae_cw_iterations = 100;  // CW budget when building the DAE training set

  std::vector<attacks::AttackSpec> attacks;
  std::vector<DefenseKind> deployed;
  std::string attacked = "singletons";  // "singletons", "all", or "+"-keys joined by ';'

  std::filesystem::path output_dir = "out";
  std::filesystem::path cache_dir;  // empty: no checkpoint cache
  std::string text;                 // raw config, for hashing

  std::vector<metrics::DefenseSet> attacked_sets() const;
  std::string hash() const;  // FNV-1a of the raw text, hex
  nlohmann::json to_json() const;

  // INI sections [data], [models], [matrix], [output], [attack.<ALG>]. Relative
  // paths resolve against the config file's directory.
  static DeskConfig parse(const std::string& text, const std::filesystem::path& base = ".");
  static DeskConfig read(const std::filesystem::path& path);
};

struct Splits {
  Dataset train, test, eval;
};
Splits load_splits(const DeskConfig& config);

// --------------------------------------------------------- infrastructure

struct Infrastructure {
  zoo::TrainedModel classifier, dae, compression_ae, ae_reduced, dae_reduced;
  double dae_set_seconds = 0.0;  // attack generation for the DAE training set
  std::vector<std::string> loaded;  // names served from the cache
  // Training wall-clock per model. Checkpoints store 0 so they are byte-reproducible.
  std::map<std::string, double> seconds;

  defense::ClassifierBank bank() const;
  defense::Components components() const;
  defense::Repertoire repertoire(const std::vector<DefenseKind>& kinds, std::uint64_t seed) const;
};

Infrastructure build_infrastructure(const DeskConfig& config, const Splits& data, const Log& log = {});

inline constexpr std::array<const char*, 5> kModelNames = {
    "classifier", "dae", "compression_ae", "ae_reduced_classifier", "dae_reduced_classifier"};
// <dir>/<name>.abf for every model; returns the written paths.
std::vector<std::filesystem::path> save_infrastructure(const Infrastructure& inf, const std::filesystem::path& dir);
// Throws MissingComponentError naming the first absent checkpoint.
Infrastructure load_infrastructure(const std::filesystem::path& dir);

// ------------------------------------------------------------ outputs

// Removes every registered path unless commit() ran.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard();
  const std::filesystem::path& add(std::filesystem::path p);
  const std::vector<std::filesystem::path>& paths() const { return paths_; }
  void commit() { committed_ = true; }

 private:
  std::vector<std::filesystem::path> paths_;
  bool committed_ = false;
};

std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

struct Manifest {
  std::string command;
  nlohmann::json config;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  double wall_seconds = 0.0;
  std::vector<std::filesystem::path> outputs;

  nlohmann::json to_json() const;  // outputs carry size and FNV-1a hash
  void write(const std::filesystem::path& path) const;
};

}  // namespace abf::harness
