#include <algorithm>
#include <random>

#include "abf/csv.hpp"
#include "abf/error.hpp"
#include "abf/planner.hpp"
#include "doctest.h"

using namespace abf;
using namespace abf::planner;
using defense::DefenseKind;
using C = Component;

namespace {

const std::filesystem::path kFixtures = ABF_FIXTURE_DIR;

metrics::AccuracyMatrix fashion_cw() {
  const auto t = csv::parse(csv::read_text(kFixtures / "fashion_cw.csv"));
  std::vector<DefenseKind> cols(defense::kAllKinds.begin(), defense::kAllKinds.end());
  metrics::AccuracyMatrix m(cols);
  for (const auto& row : t.rows)
    for (auto e : cols)
      if (auto v = csv::number(row[t.column("acc_" + defense::kind_name(e))]))
        m.set(metrics::parse_set(row[0]), e, *v);
  return m;
}

const TrainingOrder& by_id(const std::vector<TrainingOrder>& v, int id) {
  return *std::find_if(v.begin(), v.end(), [&](const auto& o) { return o.id == id; });
}

std::vector<int> ids(const std::vector<TrainingOrder>& v) {
  std::vector<int> out;
  for (const auto& o : v) out.push_back(o.id);
  return out;
}

}  // namespace

TEST_CASE("eighteen orders with stable ids") {
  const auto orders = enumerate_orders();
  REQUIRE(orders.size() == 18);
  for (int i = 0; i < 18; ++i) CHECK(orders[i].id == i);
  using Seq = std::array<C, 4>;
  CHECK(by_id(orders, 1).sequence == Seq{C::clf, C::dae, C::ae, C::dae_red_clf});
  CHECK(by_id(orders, 4).sequence == Seq{C::clf, C::ae, C::dae, C::dae_red_clf});
  CHECK(by_id(orders, 9).sequence == Seq{C::dae, C::dae_red_clf, C::ae, C::clf});
  CHECK(by_id(orders, 12).sequence[0] == C::ae);
  // Every order is a permutation of the four components.
  for (const auto& o : orders) {
    auto s = o.sequence;
    std::sort(s.begin(), s.end());
    CHECK(s == Seq{C::clf, C::dae, C::ae, C::dae_red_clf});
  }
}

TEST_CASE("pruning keeps five orders, each elimination has a rule") {
  const auto orders = enumerate_orders();
  const auto r = prune(orders);
  CHECK(ids(r.survivors) == std::vector<int>{1, 4, 8, 9, 12});
  CHECK(r.eliminated.size() == 13);
  for (int id : {6, 7, 14}) CHECK(r.eliminated.at(id) == Rule::root_swap);
  for (int id : {0, 15}) CHECK(r.eliminated.at(id) == Rule::greedy_unlock);
  for (const auto& [id, rule] : r.eliminated) {
    CHECK(rule != Rule::kept);
    CHECK(!rule_reason(rule).empty());
    CHECK(rule_name(rule).size() == 2);
  }
  // R1: every survivor trains the DAE before the reduced classifier that reads its bottleneck.
  for (const auto& o : r.survivors) {
    const auto& s = o.sequence;
    CHECK(std::find(s.begin(), s.end(), C::dae) < std::find(s.begin(), s.end(), C::dae_red_clf));
  }
}

TEST_CASE("pruning does not depend on input order") {
  auto orders = enumerate_orders();
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(orders.begin(), orders.end(), gen);
    const auto r = prune(orders);
    CHECK(ids(r.survivors) == std::vector<int>{1, 4, 8, 9, 12});
  }
}

TEST_CASE("availability follows the trained components") {
  using K = DefenseKind;
  CHECK(available_defenses({}).empty());
  CHECK(available_defenses({C::clf}) == std::vector<K>{K::none});
  CHECK(available_defenses({C::dae}).empty());
  CHECK(available_defenses({C::dae, C::dae_red_clf}) == std::vector<K>{K::hl});
  CHECK(available_defenses({C::ae}) == std::vector<K>{K::ae});
  CHECK(available_defenses({C::clf, C::dae, C::ae}) ==
        std::vector<K>{K::none, K::dae, K::cascade, K::ae});
  CHECK(available_defenses({C::clf, C::dae, C::ae, C::dae_red_clf}).size() == 5);
}

TEST_CASE("cost model from the training-time table") {
  const auto cost = CostModel::read_csv(kFixtures / "training_times.csv");
  CHECK(cost.classifier_full == 42.13);
  CHECK(cost.cost(C::ae) == doctest::Approx(75.46));
  CHECK(cost.cost(C::dae_red_clf) == doctest::Approx(15.46));
  CHECK_THROWS(CostModel::from_csv("network,seconds\nclassifier_full,-1\n"));
  CostModel bad;
  bad.dae = 0;
  CHECK_THROWS_AS(bad.validate(), PreconditionError);
}

TEST_CASE("schedule times and accuracies reproduce the published plan") {
  const auto cost = CostModel::read_csv(kFixtures / "training_times.csv");
  const auto m = fashion_cw();
  const auto orders = enumerate_orders();
  const auto s4 = schedule(by_id(orders, 4), cost, &m);
  const double times[] = {42.13, 117.59, 417.59, 433.05};
  for (int i = 0; i < 4; ++i) CHECK(s4.steps[i].cumulative_seconds == doctest::Approx(times[i]).epsilon(1e-12));

  const auto t = csv::parse(csv::read_text(kFixtures / "schedules.csv"));
  std::size_t checked = 0;
  for (const auto& row : t.rows) {
    const int id = std::stoi(row[0]);
    const std::size_t step = std::stoul(row[1]) - 1;
    const auto sch = schedule(by_id(orders, id), cost, &m);
    const auto& st = sch.steps.at(step);
    CHECK(component_name(st.component) == row[2]);
    CHECK(std::abs(st.cumulative_seconds - *csv::number(row[3])) < 1e-9);
    const auto expected = csv::number(row[5]);
    CHECK(st.avg_accuracy.has_value() == expected.has_value());
    if (expected && st.avg_accuracy) CHECK(std::abs(*st.avg_accuracy - *expected) <= 0.01);
    ++checked;
  }
  CHECK(checked == 20);

  const auto bare = schedule(by_id(orders, 1), cost);
  for (const auto& st : bare.steps) CHECK(!st.avg_accuracy);
}

TEST_CASE("recommendation under budgets") {
  const auto cost = CostModel::read_csv(kFixtures / "training_times.csv");
  const auto m = fashion_cw();
  const auto survivors = prune(enumerate_orders()).survivors;

  const auto at120 = recommend(survivors, cost, &m, 120);
  REQUIRE(at120.ranking.size() == 3);  // orders 8 and 9 finish nothing by then
  CHECK(at120.ranking[0].order_id == 4);
  CHECK(at120.ranking[1].order_id == 12);
  CHECK(at120.ranking[0].avg_accuracy.value() == doctest::Approx(80.8).epsilon(1e-3));
  CHECK(at120.ranking[2].order_id == 1);
  CHECK(at120.ranking[2].steps_completed == 1);
  CHECK(at120.ranking[2].avg_accuracy.value() == doctest::Approx(6.55));

  const auto full = recommend(survivors, cost, &m, 433.05);
  REQUIRE(full.ranking.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(full.ranking[i].order_id == std::vector<int>{1, 4, 8, 9, 12}[i]);
    CHECK(full.ranking[i].steps_completed == 4);
  }

  const auto tiny = recommend(survivors, cost, &m, 10);
  CHECK(tiny.ranking.empty());
  CHECK(!tiny.diagnostic.empty());

  // Without a matrix the ranking falls back to completion time.
  const auto unscored = recommend(survivors, cost, nullptr, 120);
  REQUIRE(!unscored.ranking.empty());
  CHECK(unscored.ranking[0].order_id == 1);
}

TEST_CASE("plan CSV matches the shipped schedule columns") {
  const auto cost = CostModel::read_csv(kFixtures / "training_times.csv");
  const auto m = fashion_cw();
  std::vector<Schedule> all;
  for (const auto& o : prune(enumerate_orders()).survivors) all.push_back(schedule(o, cost, &m));
  const auto t = csv::parse(plan_csv(all));
  const auto ref = csv::parse(csv::read_text(kFixtures / "schedules.csv"));
  CHECK(t.header == ref.header);
  REQUIRE(t.rows.size() == ref.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(t.rows[i][0] == ref.rows[i][0]);
    CHECK(t.rows[i][2] == ref.rows[i][2]);
    CHECK(t.rows[i][4] == ref.rows[i][4]);
  }
}
