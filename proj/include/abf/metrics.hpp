#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abf/attacks.hpp"
#include "abf/defenses.hpp"

namespace abf::metrics {

using defense::DefenseKind;

// Attacked defense set D, kept sorted by kind and duplicate-free. The empty
// set is the no-attack row; {none} is the naive attack.
using DefenseSet = std::vector<DefenseKind>;
DefenseSet make_set(std::vector<DefenseKind> kinds);
// Kind names sorted alphabetically and joined by "+"; "" for no attack.
std::string set_key(const DefenseSet& d);
DefenseSet parse_set(std::string_view key);
bool contains(const DefenseSet& d, DefenseKind e);
// Every non-empty subset of `kinds`, smallest first.
std::vector<DefenseSet> all_attacked_sets(const std::vector<DefenseKind>& kinds);

// accuracy[attacked set][deployed defense], percent.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::vector<DefenseKind> columns);

  const std::vector<DefenseKind>& columns() const { return columns_; }
  std::vector<DefenseSet> rows() const;  // canonical order: no attack, then by size and kind
  bool has_column(DefenseKind e) const;
  bool has_row(const DefenseSet& d) const { return cells_.count(set_key(d)) != 0; }

  void set(const DefenseSet& d, DefenseKind e, double percent);  // percent in [0, 100]
  std::optional<double> get(const DefenseSet& d, DefenseKind e) const;
  double at(const DefenseSet& d, DefenseKind e) const;  // Error "missing_cell" if absent

  void validate() const;  // the no-attack row is present for every column

  // First column "attacked_set", then one column per deployed defense;
  // empty fields are absent cells.
  std::string to_csv() const;
  static AccuracyMatrix from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;
  static AccuracyMatrix read_csv(const std::filesystem::path& path);

 private:
  std::size_t column_index(DefenseKind e) const;
  std::vector<DefenseKind> columns_;
  std::map<std::string, std::vector<std::optional<double>>> cells_;
};

// s(a(D)): mean no-attack accuracy over d in D minus mean attacked accuracy over d in D.
double success(const AccuracyMatrix& m, const DefenseSet& d);
// s(a(D)|e): no-attack accuracy at e minus accuracy at e under a(D). May be negative.
double success_given(const AccuracyMatrix& m, const DefenseSet& d, DefenseKind e);

enum class Status { ok, member, null_attack, missing };

struct Measure {
  double value = 0.0;
  Status status = Status::missing;
  bool defined() const { return status == Status::ok; }
  // "undefined" (e in D), "undefined (null attack)", "missing", or "".
  std::string marker() const;
};

// r_e(D) = 100 (s(a(D)) - s(a(D)|e)) / s(a(D)).
Measure replacement_robustness(const AccuracyMatrix& m, const DefenseSet& d, DefenseKind e);

struct LowerBound {
  Measure value;
  std::optional<DefenseKind> argmax;  // first maximiser in the order of E
};
// max over e in E \ D of r_e(D).
LowerBound universal_lower_bound(const AccuracyMatrix& m, const DefenseSet& d,
                                 const std::vector<DefenseKind>& candidates);

struct ReportRow {
  DefenseSet attacked;
  std::vector<std::optional<double>> accuracy;      // per column
  std::optional<double> success;                    // s(a(D))
  std::vector<std::optional<double>> success_given; // per column
  std::vector<Measure> robustness;                  // r_e(D) per column
  LowerBound bound;
};

struct RobustnessReport {
  std::vector<DefenseKind> columns;
  std::vector<ReportRow> rows;  // attacked rows only

  // attacked_set, acc_<e>..., s, s_given_<e>..., r_<e>..., lower_bound, lower_bound_defense
  std::string to_csv() const;
};

// `candidates` defaults to every matrix column.
RobustnessReport robustness_report(const AccuracyMatrix& m,
                                   std::optional<std::vector<DefenseKind>> candidates = {});

// Half away from zero, to `decimals` places.
double round_half_away(double v, int decimals);
std::string format_number(double v, int decimals = 6);

struct MatrixRun {
  AccuracyMatrix matrix;
  std::map<std::string, attacks::AttackSet> attack_sets;  // by set key
  std::map<std::string, std::string> errors;              // rows whose attack failed
};

// Generates a(D) for every D against the composite of the victim systems of
// its members, then evaluates each deployed column on the shared perturbed
// set. The no-attack row comes from clean data.
MatrixRun build_accuracy_matrix(const defense::ClassifierBank& bank,
                                const defense::Repertoire& repertoire,
                                const attacks::AttackSpec& spec, const Dataset& data,
                                const std::vector<DefenseSet>& attacked_sets,
                                const std::function<void(const std::string&)>& progress = {});

}  // namespace abf::metrics
