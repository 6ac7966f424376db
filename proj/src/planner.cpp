#include "abf/planner.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "abf/csv.hpp"
#include "abf/error.hpp"

namespace abf::planner {

std::string component_name(Component c) {
  switch (c) {
    case Component::clf: return "clf";
    case Component::dae: return "dae";
    case Component::ae: return "ae";
    case Component::dae_red_clf: return "dae_red_clf";
  }
  return "?";
}

Component component_from(std::string_view name) {
  for (auto c : {Component::clf, Component::dae, Component::ae, Component::dae_red_clf})
    if (name == component_name(c)) return c;
  throw FormatError("bad_component", "unknown component '" + std::string(name) + "'");
}

std::vector<TrainingOrder> enumerate_orders() {
  using C = Component;
  const std::pair<C, std::array<C, 3>> roots[] = {
      {C::clf, {C::dae, C::dae_red_clf, C::ae}},
      {C::dae, {C::clf, C::dae_red_clf, C::ae}},
      {C::ae, {C::clf, C::dae, C::dae_red_clf}},
  };
  std::vector<TrainingOrder> out;
  for (const auto& [root, base] : roots) {
    std::array<int, 3> idx{0, 1, 2};
    do {
      TrainingOrder o;
      o.id = static_cast<int>(out.size());
      o.sequence = {root, base[idx[0]], base[idx[1]], base[idx[2]]};
      out.push_back(o);
    } while (std::next_permutation(idx.begin(), idx.end()));
  }
  return out;
}

std::string rule_name(Rule r) {
  switch (r) {
    case Rule::kept: return "";
    case Rule::dependency: return "R1";
    case Rule::root_swap: return "R2";
    case Rule::no_classifier: return "R3";
    case Rule::greedy_unlock: return "R4";
  }
  return "?";
}

std::string rule_reason(Rule r) {
  switch (r) {
    case Rule::kept: return "";
    case Rule::dependency: return "dae_red_clf trained before dae";
    case Rule::root_swap: return "dae trained directly before clf unlocks nothing the swapped order lacks";
    case Rule::no_classifier: return "dae then ae with no classifier trained";
    case Rule::greedy_unlock:
      return "third step trains dae_red_clf while the sibling order's third step unlocks more defenses";
  }
  return "";
}

std::vector<DefenseKind> available_defenses(const std::vector<Component>& trained) {
  auto has = [&](Component c) { return std::find(trained.begin(), trained.end(), c) != trained.end(); };
  std::vector<DefenseKind> out;
  const bool clf = has(Component::clf), dae = has(Component::dae), ae = has(Component::ae);
  if (clf) out.push_back(DefenseKind::none);
  if (clf && dae) out.push_back(DefenseKind::dae);
  if (clf && dae && ae) out.push_back(DefenseKind::cascade);
  if (dae && has(Component::dae_red_clf)) out.push_back(DefenseKind::hl);
  if (ae) out.push_back(DefenseKind::ae);
  return out;
}

namespace {

std::vector<Component> prefix(const TrainingOrder& o, std::size_t n) {
  return {o.sequence.begin(), o.sequence.begin() + static_cast<long>(n)};
}

// Number of defenses newly available after step `i` (0-based).
std::size_t unlocked_at(const std::array<Component, 4>& seq, std::size_t i) {
  const std::vector<Component> before(seq.begin(), seq.begin() + static_cast<long>(i));
  const std::vector<Component> after(seq.begin(), seq.begin() + static_cast<long>(i + 1));
  return available_defenses(after).size() - available_defenses(before).size();
}

bool dependency_ok(const std::array<Component, 4>& seq) {
  const auto d = std::find(seq.begin(), seq.end(), Component::dae);
  const auto r = std::find(seq.begin(), seq.end(), Component::dae_red_clf);
  return d < r;
}

Rule classify_order(const TrainingOrder& o) {
  const auto& s = o.sequence;
  if (!dependency_ok(s)) return Rule::dependency;
  for (std::size_t i = 0; i + 1 < 4; ++i)
    if (s[i] == Component::dae && s[i + 1] == Component::clf && unlocked_at(s, i) == 0) {
      auto swapped = s;
      std::swap(swapped[i], swapped[i + 1]);
      if (dependency_ok(swapped)) return Rule::root_swap;
    }
  if (s[0] == Component::dae && s[1] == Component::ae) return Rule::no_classifier;
  if (s[2] == Component::dae_red_clf) {
    auto sibling = s;
    std::swap(sibling[2], sibling[3]);
    if (dependency_ok(sibling) && unlocked_at(sibling, 2) > unlocked_at(s, 2)) return Rule::greedy_unlock;
  }
  return Rule::kept;
}

}  // namespace

PruneResult prune(const std::vector<TrainingOrder>& orders) {
  PruneResult r;
  for (const auto& o : orders) {
    const Rule rule = classify_order(o);
    if (rule == Rule::kept) r.survivors.push_back(o);
    else r.eliminated[o.id] = rule;
  }
  std::sort(r.survivors.begin(), r.survivors.end(),
            [](const TrainingOrder& a, const TrainingOrder& b) { return a.id < b.id; });
  return r;
}

void CostModel::validate() const {
  if (!(classifier_full > 0 && classifier_reduced > 0 && dae > 0 && ae > 0))
    throw PreconditionError("every training cost must be > 0");
}

double CostModel::cost(Component c) const {
  switch (c) {
    case Component::clf: return classifier_full;
    case Component::dae: return dae;
    case Component::ae: return ae + classifier_reduced;
    case Component::dae_red_clf: return classifier_reduced;
  }
  return 0.0;
}

CostModel CostModel::from_csv(const std::string& text) {
  const auto t = csv::parse(text);
  const auto name = t.column("network"), secs = t.column("seconds");
  CostModel m;
  std::set<std::string> seen;
  for (const auto& row : t.rows) {
    const auto v = csv::number(row[secs]);
    if (!v) throw FormatError("malformed", "cost for " + row[name] + " is empty");
    if (row[name] == "classifier_full") m.classifier_full = *v;
    else if (row[name] == "classifier_reduced") m.classifier_reduced = *v;
    else if (row[name] == "dae") m.dae = *v;
    else if (row[name] == "ae") m.ae = *v;
    else throw FormatError("malformed", "unknown network '" + row[name] + "' in cost table");
    seen.insert(row[name]);
  }
  if (seen.size() != 4) throw FormatError("malformed", "cost table must list all four networks");
  m.validate();
  return m;
}

CostModel CostModel::read_csv(const std::filesystem::path& path) { return from_csv(csv::read_text(path)); }

Schedule schedule(const TrainingOrder& order, const CostModel& cost,
                  const metrics::AccuracyMatrix* matrix) {
  cost.validate();
  Schedule s{order, {}};
  double t = 0.0;
  std::vector<DefenseKind> before;
  for (std::size_t i = 0; i < 4; ++i) {
    Step st;
    st.component = order.sequence[i];
    t += cost.cost(st.component);
    st.cumulative_seconds = t;
    st.available = available_defenses(prefix(order, i + 1));
    for (auto k : st.available)
      if (std::find(before.begin(), before.end(), k) == before.end()) st.added.push_back(k);
    if (matrix && !st.available.empty()) {
      const auto row = metrics::make_set(st.available);
      double sum = 0.0;
      bool complete = true;
      for (auto e : st.available) {
        const auto v = matrix->get(row, e);
        if (!v) {
          complete = false;
          break;
        }
        sum += *v;
      }
      if (complete) st.avg_accuracy = sum / static_cast<double>(st.available.size());
    }
    before = st.available;
    s.steps.push_back(std::move(st));
  }
  return s;
}

Recommendation recommend(const std::vector<TrainingOrder>& survivors, const CostModel& cost,
                         const metrics::AccuracyMatrix* matrix, double budget_seconds) {
  if (!(budget_seconds > 0.0)) throw PreconditionError("budget must be > 0");
  Recommendation rec;
  const double slack = 1e-9 * std::max(1.0, budget_seconds);
  for (const auto& o : survivors) {
    const auto s = schedule(o, cost, matrix);
    Ranked r;
    r.order_id = o.id;
    for (const auto& st : s.steps) {
      if (st.cumulative_seconds > budget_seconds + slack) break;
      ++r.steps_completed;
      r.completion_seconds = st.cumulative_seconds;
      r.avg_accuracy = st.avg_accuracy;
    }
    if (r.steps_completed > 0) rec.ranking.push_back(r);
  }
  // Sums over differently ordered cells differ in the last bits; treat those as ties.
  auto differ = [](double a, double b) { return std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a)); };
  std::stable_sort(rec.ranking.begin(), rec.ranking.end(), [&](const Ranked& a, const Ranked& b) {
    if (a.avg_accuracy.has_value() != b.avg_accuracy.has_value()) return a.avg_accuracy.has_value();
    if (a.avg_accuracy && differ(*a.avg_accuracy, *b.avg_accuracy)) return *a.avg_accuracy > *b.avg_accuracy;
    if (differ(a.completion_seconds, b.completion_seconds)) return a.completion_seconds < b.completion_seconds;
    return a.order_id < b.order_id;
  });
  if (rec.ranking.empty()) {
    double cheapest = 0.0;
    for (const auto& o : survivors) {
      const double c = cost.cost(o.sequence[0]);
      cheapest = cheapest == 0.0 ? c : std::min(cheapest, c);
    }
    rec.diagnostic = "no order completes a step within " + metrics::format_number(budget_seconds, 2) +
                     " s; the cheapest first step takes " + metrics::format_number(cheapest, 2) + " s";
  }
  return rec;
}

std::string plan_csv(const std::vector<Schedule>& schedules) {
  std::ostringstream out;
  out << "order_id,step,component,cumulative_seconds,defenses_added,avg_accuracy\n";
  for (const auto& s : schedules)
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      const auto& st = s.steps[i];
      out << s.order.id << ',' << i + 1 << ',' << component_name(st.component) << ','
          << metrics::format_number(st.cumulative_seconds) << ',' << metrics::set_key(st.added) << ',';
      if (st.avg_accuracy) out << metrics::format_number(*st.avg_accuracy);
      out << '\n';
    }
  return out.str();
}

}  // namespace abf::planner
