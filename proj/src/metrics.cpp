#include "abf/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "abf/csv.hpp"
#include "abf/error.hpp"

namespace abf::metrics {

DefenseSet make_set(std::vector<DefenseKind> kinds) {
  std::sort(kinds.begin(), kinds.end());
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  return kinds;
}

std::string set_key(const DefenseSet& d) {
  std::vector<std::string> names;
  for (auto k : d) names.push_back(defense::kind_name(k));
  std::sort(names.begin(), names.end());
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) out += (i ? "+" : "") + names[i];
  return out;
}

DefenseSet parse_set(std::string_view key) {
  if (key.empty()) return {};
  std::vector<DefenseKind> kinds;
  for (const auto& part : csv::split(key, '+')) kinds.push_back(defense::kind_from(part));
  return make_set(std::move(kinds));
}

bool contains(const DefenseSet& d, DefenseKind e) {
  return std::find(d.begin(), d.end(), e) != d.end();
}

std::vector<DefenseSet> all_attacked_sets(const std::vector<DefenseKind>& kinds) {
  std::vector<DefenseSet> out;
  const std::size_t n = kinds.size();
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    std::vector<DefenseKind> s;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) s.push_back(kinds[i]);
    out.push_back(make_set(std::move(s)));
  }
  std::stable_sort(out.begin(), out.end(), [](const DefenseSet& a, const DefenseSet& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

// ------------------------------------------------------------------ matrix

AccuracyMatrix::AccuracyMatrix(std::vector<DefenseKind> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw PreconditionError("accuracy matrix needs at least one column");
  for (std::size_t i = 0; i < columns_.size(); ++i)
    for (std::size_t j = i + 1; j < columns_.size(); ++j)
      if (columns_[i] == columns_[j])
        throw PreconditionError("duplicate matrix column " + defense::kind_name(columns_[i]));
}

std::vector<DefenseSet> AccuracyMatrix::rows() const {
  std::vector<DefenseSet> out;
  for (const auto& [key, _] : cells_) out.push_back(parse_set(key));
  std::sort(out.begin(), out.end(), [](const DefenseSet& a, const DefenseSet& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

bool AccuracyMatrix::has_column(DefenseKind e) const {
  return std::find(columns_.begin(), columns_.end(), e) != columns_.end();
}

std::size_t AccuracyMatrix::column_index(DefenseKind e) const {
  const auto it = std::find(columns_.begin(), columns_.end(), e);
  if (it == columns_.end())
    throw PreconditionError("defense " + defense::kind_name(e) + " is not a matrix column");
  return static_cast<std::size_t>(it - columns_.begin());
}

void AccuracyMatrix::set(const DefenseSet& d, DefenseKind e, double percent) {
  if (!(percent >= 0.0 && percent <= 100.0))
    throw PreconditionError("accuracy " + std::to_string(percent) + " outside [0, 100]");
  const std::size_t j = column_index(e);
  auto& row = cells_[set_key(make_set(d))];
  row.resize(columns_.size());
  row[j] = percent;
}

std::optional<double> AccuracyMatrix::get(const DefenseSet& d, DefenseKind e) const {
  const auto it = cells_.find(set_key(make_set(d)));
  if (it == cells_.end() || !has_column(e)) return std::nullopt;
  return it->second[column_index(e)];
}

double AccuracyMatrix::at(const DefenseSet& d, DefenseKind e) const {
  const auto v = get(d, e);
  if (!v)
    throw Error("missing_cell", "no accuracy for attacked set {" + set_key(d) + "} and deployed " +
                                    defense::kind_name(e));
  return *v;
}

void AccuracyMatrix::validate() const {
  for (auto e : columns_)
    if (!get({}, e))
      throw Error("missing_cell", "no-attack row lacks deployed defense " + defense::kind_name(e));
}

std::string AccuracyMatrix::to_csv() const {
  std::ostringstream out;
  out << "attacked_set";
  for (auto e : columns_) out << ',' << defense::kind_name(e);
  out << '\n';
  for (const auto& d : rows()) {
    out << set_key(d);
    for (auto e : columns_) {
      out << ',';
      if (const auto v = get(d, e)) {
        char buf[32];
        const auto r = std::to_chars(buf, buf + sizeof buf, *v);  // shortest round-trip form
        out << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf));
      }
    }
    out << '\n';
  }
  return out.str();
}

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& text) {
  const auto t = csv::parse(text);
  if (t.header.empty() || t.header[0] != "attacked_set")
    throw FormatError("malformed", "accuracy matrix csv must start with attacked_set");
  std::vector<DefenseKind> cols;
  for (std::size_t j = 1; j < t.header.size(); ++j) cols.push_back(defense::kind_from(t.header[j]));
  AccuracyMatrix m(cols);
  for (const auto& row : t.rows) {
    const auto d = parse_set(row[0]);
    if (m.has_row(d)) throw FormatError("malformed", "duplicate attacked_set '" + row[0] + "'");
    m.cells_[set_key(d)].resize(cols.size());
    for (std::size_t j = 1; j < row.size(); ++j)
      if (const auto v = csv::number(row[j])) m.set(d, cols[j - 1], *v);
  }
  return m;
}

void AccuracyMatrix::write_csv(const std::filesystem::path& path) const {
  csv::write_text(path, to_csv());
}

AccuracyMatrix AccuracyMatrix::read_csv(const std::filesystem::path& path) {
  return from_csv(csv::read_text(path));
}

// ----------------------------------------------------------------- metrics

double success(const AccuracyMatrix& m, const DefenseSet& d_in) {
  const auto d = make_set(d_in);
  if (d.empty()) throw PreconditionError("attack success is undefined for the no-attack row");
  double clean = 0.0, attacked = 0.0;
  for (auto k : d) {
    clean += m.at({}, k);
    attacked += m.at(d, k);
  }
  const double n = static_cast<double>(d.size());
  return clean / n - attacked / n;
}

double success_given(const AccuracyMatrix& m, const DefenseSet& d, DefenseKind e) {
  return m.at({}, e) - m.at(d, e);
}

std::string Measure::marker() const {
  switch (status) {
    case Status::ok: return "";
    case Status::member: return "undefined";
    case Status::null_attack: return "undefined (null attack)";
    case Status::missing: return "missing";
  }
  return "";
}

Measure replacement_robustness(const AccuracyMatrix& m, const DefenseSet& d_in, DefenseKind e) {
  const auto d = make_set(d_in);
  if (d.empty()) throw PreconditionError("robustness is undefined for the no-attack row");
  if (contains(d, e)) return {0.0, Status::member};
  double s = 0.0, se = 0.0;
  try {
    s = success(m, d);
    se = success_given(m, d, e);
  } catch (const Error& err) {
    if (err.kind() == "missing_cell") return {0.0, Status::missing};
    throw;
  }
  if (s == 0.0) return {0.0, Status::null_attack};
  return {(s - se) / s * 100.0, Status::ok};
}

LowerBound universal_lower_bound(const AccuracyMatrix& m, const DefenseSet& d_in,
                                 const std::vector<DefenseKind>& candidates) {
  const auto d = make_set(d_in);
  bool any = false;
  for (auto e : candidates) any = any || !contains(d, e);
  if (!any) throw PreconditionError("no candidate defense lies outside {" + set_key(d) + "}");
  LowerBound best;
  Status fallback = Status::missing;
  for (auto e : candidates) {
    if (contains(d, e)) continue;
    const auto r = replacement_robustness(m, d, e);
    if (!r.defined()) {
      if (r.status == Status::null_attack) fallback = Status::null_attack;
      continue;
    }
    if (!best.value.defined() || r.value > best.value.value) {
      best.value = r;
      best.argmax = e;
    }
  }
  if (!best.value.defined()) best.value.status = fallback;
  return best;
}

RobustnessReport robustness_report(const AccuracyMatrix& m,
                                   std::optional<std::vector<DefenseKind>> candidates) {
  const auto E = candidates ? *candidates : m.columns();
  RobustnessReport rep;
  rep.columns = m.columns();
  for (const auto& d : m.rows()) {
    if (d.empty()) continue;
    ReportRow row;
    row.attacked = d;
    for (auto e : rep.columns) {
      row.accuracy.push_back(m.get(d, e));
      const auto clean = m.get({}, e), att = m.get(d, e);
      row.success_given.push_back(clean && att ? std::optional<double>(*clean - *att) : std::nullopt);
      row.robustness.push_back(replacement_robustness(m, d, e));
    }
    try {
      row.success = success(m, d);
    } catch (const Error& err) {
      if (err.kind() != "missing_cell") throw;
    }
    bool outside = false;
    for (auto e : E) outside = outside || !contains(d, e);
    if (outside) row.bound = universal_lower_bound(m, d, E);
    else row.bound.value.status = Status::member;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string RobustnessReport::to_csv() const {
  std::ostringstream out;
  out << "attacked_set";
  for (auto e : columns) out << ",acc_" << defense::kind_name(e);
  out << ",s";
  for (auto e : columns) out << ",s_given_" << defense::kind_name(e);
  for (auto e : columns) out << ",r_" << defense::kind_name(e);
  out << ",lower_bound,lower_bound_defense\n";
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << format_number(*v);
  };
  auto measure = [&](const Measure& v) {
    if (v.defined()) out << format_number(v.value);
    else out << v.marker();
  };
  for (const auto& r : rows) {
    out << set_key(r.attacked);
    for (const auto& a : r.accuracy) out << ',', opt(a);
    out << ',', opt(r.success);
    for (const auto& s : r.success_given) out << ',', opt(s);
    for (const auto& v : r.robustness) out << ',', measure(v);
    out << ',', measure(r.bound.value);
    out << ',' << (r.bound.argmax ? defense::kind_name(*r.bound.argmax) : "") << '\n';
  }
  return out.str();
}

double round_half_away(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Scaled values like 1.005 * 100 sit a hair below .5; nudge by a relative ulp budget.
  const double x = std::abs(v) * scale;
  const double r = std::floor(x + 0.5 + 1e-9 * std::max(1.0, x));
  return std::copysign(r / scale, v);
}

std::string format_number(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_half_away(v, decimals));
  std::string s = buf;
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

// ---------------------------------------------------------- live matrices

MatrixRun build_accuracy_matrix(const defense::ClassifierBank& bank,
                                const defense::Repertoire& repertoire,
                                const attacks::AttackSpec& spec, const Dataset& data,
                                const std::vector<DefenseSet>& attacked_sets,
                                const std::function<void(const std::string&)>& progress) {
  repertoire.validate();
  std::vector<DefenseKind> columns;
  for (const auto& p : repertoire.pipelines) columns.push_back(p.kind);
  MatrixRun run{AccuracyMatrix(columns), {}, {}};

  Dataset shared = data;
  auto fill_row = [&](const DefenseSet& d, const Tensor& inputs) {
    shared.inputs = inputs;
    for (const auto& p : repertoire.pipelines)
      run.matrix.set(d, p.kind, defense::accuracy(p, bank, shared));
  };
  fill_row({}, data.inputs);

  std::map<DefenseKind, attacks::VictimSystem> victims;
  for (const auto& p : repertoire.pipelines) victims.emplace(p.kind, defense::victim_system(p, bank));

  for (const auto& d_in : attacked_sets) {
    const auto d = make_set(d_in);
    if (d.empty()) continue;
    const std::string key = set_key(d);
    if (progress) progress(key);
    try {
      std::vector<const attacks::VictimSystem*> members;
      for (auto k : d) {
        const auto it = victims.find(k);
        if (it == victims.end()) throw MissingComponentError(defense::kind_name(k));
        members.push_back(&it->second);
      }
      const attacks::CompositeVictim composite(members);
      auto set = attacks::generate_attack_set(spec, composite, data);
      fill_row(d, set.adversarial);
      run.attack_sets.emplace(key, std::move(set));
    } catch (const Error& e) {
      run.errors[key] = e.kind() + ": " + e.what();
    }
  }
  return run;
}

}  // namespace abf::metrics
