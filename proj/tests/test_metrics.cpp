#include <cmath>
#include <random>

#include <set>

#include "abf/csv.hpp"
#include "abf/error.hpp"
#include "abf/metrics.hpp"
#include "abf/model_zoo.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace abf;
using namespace abf::metrics;
using defense::DefenseKind;

namespace {

const std::filesystem::path kFixtures = ABF_FIXTURE_DIR;

AccuracyMatrix fixture(const std::string& name) {
  // The reference tables carry r_* columns too; keep only the accuracies.
  const auto t = csv::parse(csv::read_text(kFixtures / name));
  std::vector<DefenseKind> cols(defense::kAllKinds.begin(), defense::kAllKinds.end());
  AccuracyMatrix m(cols);
  for (const auto& row : t.rows)
    for (auto e : cols)
      if (auto v = csv::number(row[t.column("acc_" + defense::kind_name(e))]))
        m.set(parse_set(row[0]), e, *v);
  return m;
}

DefenseSet S(std::initializer_list<DefenseKind> k) { return make_set(k); }

constexpr auto none = DefenseKind::none, dae = DefenseKind::dae, cascade = DefenseKind::cascade,
               hl = DefenseKind::hl, ae = DefenseKind::ae;

}  // namespace

TEST_CASE("set keys are alphabetical and round trip") {
  CHECK(set_key({}) == "");
  CHECK(set_key(S({hl, cascade})) == "cascade+hl");
  CHECK(set_key(S({none, dae, cascade})) == "cascade+dae+none");
  CHECK(parse_set("none+dae") == S({none, dae}));
  CHECK(parse_set("") == DefenseSet{});
  CHECK(make_set({dae, dae, none}) == S({none, dae}));
  CHECK_THROWS_AS(parse_set("dae+magnet"), FormatError);
}

TEST_CASE("all attacked sets: every non-empty subset once") {
  const std::vector<DefenseKind> all(defense::kAllKinds.begin(), defense::kAllKinds.end());
  const auto sets = all_attacked_sets(all);
  CHECK(sets.size() == 31);
  std::set<std::string> keys;
  for (const auto& d : sets) {
    CHECK(!d.empty());
    keys.insert(set_key(d));
  }
  CHECK(keys.size() == 31);
  // With the no-attack row, a full table has 32 rows.
  CHECK(fixture("fashion_cw.csv").rows().size() == 32);
  for (std::size_t i = 1; i < sets.size(); ++i) CHECK(sets[i - 1].size() <= sets[i].size());
}

TEST_CASE("success and replacement robustness on a published table") {
  const auto m = fixture("fashion_cw.csv");
  CHECK(success(m, S({none})) == doctest::Approx(84.51).epsilon(1e-12));
  CHECK(success_given(m, S({none}), dae) == doctest::Approx(1.69).epsilon(1e-12));
  const auto r = replacement_robustness(m, S({none}), dae);
  REQUIRE(r.defined());
  CHECK(round_half_away(r.value, 2) == doctest::Approx(98.0));
  CHECK(std::abs(replacement_robustness(m, S({dae}), none).value - 99.21) <= 0.005);
  CHECK(std::abs(success(m, S({none, ae})) - 8.62) <= 0.005);
  // s(a(D)) averages over the members of D.
  CHECK(success(m, S({none, dae})) ==
        doctest::Approx(((91.06 + 83.57) - (45.82 + 48.07)) / 2).epsilon(1e-12));
}

TEST_CASE("negative robustness when the replacement fares worse") {
  const auto m = fixture("fashion_pgd.csv");
  const auto d = S({none, cascade});
  const double s = success(m, d);
  const double se = success_given(m, d, dae);
  CHECK(se > s);
  const auto r = replacement_robustness(m, d, dae);
  REQUIRE(r.defined());
  CHECK(r.value < 0.0);
  CHECK(std::abs(r.value - -105.73) <= 0.02);
  CHECK(r.value == doctest::Approx(100.0 * (s - se) / s).epsilon(1e-12));
}

TEST_CASE("robustness markers") {
  AccuracyMatrix m({none, dae});
  m.set({}, none, 90);
  m.set({}, dae, 80);
  m.set(S({none}), none, 90);  // null attack
  m.set(S({none}), dae, 70);
  CHECK(replacement_robustness(m, S({none}), none).marker() == "undefined");
  CHECK(replacement_robustness(m, S({none}), none).status == Status::member);
  CHECK(replacement_robustness(m, S({none}), dae).marker() == "undefined (null attack)");
  CHECK(replacement_robustness(m, S({dae}), none).marker() == "missing");
  m.set(S({none}), none, 40);
  CHECK(replacement_robustness(m, S({none}), dae).marker().empty());
}

TEST_CASE("robustness extremes are exact") {
  AccuracyMatrix m({none, dae});
  m.set({}, none, 97.3);
  m.set({}, dae, 91.1);
  m.set(S({none}), none, 3.7);
  m.set(S({none}), dae, 91.1);
  CHECK(replacement_robustness(m, S({none}), dae).value == 100.0);
  m.set({}, none, 97.5);
  m.set({}, dae, 96.0);
  m.set(S({none}), none, 3.5);
  m.set(S({none}), dae, 2.0);
  CHECK(replacement_robustness(m, S({none}), dae).value == 0.0);
}

TEST_CASE("property: r_e falls as the attack hurts e more") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    AccuracyMatrix m({none, dae, hl});
    for (auto e : {none, dae, hl}) m.set({}, e, 50 + u(gen) / 2);
    m.set(S({none, hl}), none, u(gen) / 2);
    m.set(S({none, hl}), hl, u(gen) / 2);
    const double a = u(gen), b = u(gen);
    m.set(S({none, hl}), dae, std::max(a, b));
    const auto hi = replacement_robustness(m, S({none, hl}), dae);
    m.set(S({none, hl}), dae, std::min(a, b));
    const auto lo = replacement_robustness(m, S({none, hl}), dae);
    REQUIRE(hi.defined());
    CHECK(hi.value >= lo.value);
    // s(a(D)) is not a function of the replacement's cells.
    CHECK(success(m, S({none, hl})) > 0);
  }
}

TEST_CASE("universal lower bound: max over E minus D, first maximiser wins") {
  const auto cw = fixture("fashion_cw.csv");
  const std::vector<DefenseKind> all(defense::kAllKinds.begin(), defense::kAllKinds.end());
  const auto b = universal_lower_bound(cw, S({none}), all);
  REQUIRE(b.value.defined());
  CHECK(std::abs(b.value.value - 99.74) <= 0.005);
  CHECK(b.argmax == cascade);

  const auto mn = fixture("mnist_cw.csv");
  const auto t = universal_lower_bound(mn, S({hl}), {none, dae, cascade, ae});
  REQUIRE(t.value.defined());
  CHECK(round_half_away(t.value.value, 2) == 100.0);

  AccuracyMatrix tie({none, dae, hl});
  for (auto e : {none, dae, hl}) tie.set({}, e, 90);
  tie.set(S({none}), none, 10);
  tie.set(S({none}), dae, 90);
  tie.set(S({none}), hl, 90);
  const auto tb = universal_lower_bound(tie, S({none}), {none, hl, dae});
  CHECK(tb.argmax == hl);
  CHECK(tb.value.value == 100.0);

  // Nothing to replace with.
  CHECK_THROWS_AS(universal_lower_bound(tie, S({none}), {none}), PreconditionError);
  // A singleton E is r_e itself.
  CHECK(universal_lower_bound(cw, S({none}), {hl}).value.value ==
        replacement_robustness(cw, S({none}), hl).value);
}

TEST_CASE("property: lower bound dominates each candidate") {
  const auto m = fixture("fashion_df.csv");
  const std::vector<DefenseKind> all(defense::kAllKinds.begin(), defense::kAllKinds.end());
  for (const auto& d : all_attacked_sets(all)) {
    if (!m.has_row(d) || d.size() == all.size()) continue;
    const auto b = universal_lower_bound(m, d, all);
    for (auto e : all) {
      const auto r = replacement_robustness(m, d, e);
      if (contains(d, e)) {
        CHECK(r.status == Status::member);
      } else if (r.defined()) {
        CHECK(b.value.value >= r.value);
      }
    }
  }
}

TEST_CASE("property: enlarging E never lowers the bound") {
  const auto m = fixture("fashion_pgd.csv");
  const std::vector<DefenseKind> all(defense::kAllKinds.begin(), defense::kAllKinds.end());
  for (const auto& d : all_attacked_sets(all)) {
    if (!m.has_row(d)) continue;
    std::vector<DefenseKind> E;
    std::optional<double> last;
    for (auto e : all) {
      E.push_back(e);
      bool outside = false;
      for (auto c : E) outside = outside || !contains(d, c);
      if (!outside) continue;
      const auto b = universal_lower_bound(m, d, E);
      if (!b.value.defined()) continue;
      if (last) CHECK(b.value.value >= *last);
      last = b.value.value;
    }
  }
}

TEST_CASE("matrix bounds, missing cells and CSV round trip") {
  AccuracyMatrix m({none, dae});
  CHECK_THROWS_AS(m.set({}, none, 100.5), PreconditionError);
  CHECK_THROWS_AS(m.set({}, none, -0.1), PreconditionError);
  CHECK_THROWS_AS(m.set({}, hl, 50), PreconditionError);
  m.set({}, none, 100);
  CHECK_THROWS(m.validate());
  m.set({}, dae, 0);
  m.validate();
  m.set(S({dae}), none, 12.345678901234567);
  CHECK_THROWS_AS((void)m.at(S({dae}), dae), Error);
  const auto back = AccuracyMatrix::from_csv(m.to_csv());
  CHECK(back.columns() == m.columns());
  CHECK(back.get(S({dae}), none) == m.get(S({dae}), none));
  CHECK(!back.get(S({dae}), dae));
  CHECK(back.to_csv() == m.to_csv());
  CHECK(m.to_csv().rfind("attacked_set,none,dae\n", 0) == 0);

  const auto full = fixture("fashion_cw.csv");
  CHECK(AccuracyMatrix::from_csv(full.to_csv()).to_csv() == full.to_csv());
  CHECK_THROWS(AccuracyMatrix::from_csv("attacked_set,none\n,1,2\n"));
}

TEST_CASE("report CSV carries markers as blanks and the bound's defense") {
  const auto m = fixture("mnist_cw.csv");
  const auto rep = robustness_report(m);
  CHECK(rep.rows.size() == 5);
  const auto text = rep.to_csv();
  const auto t = csv::parse(text);
  CHECK(t.header.front() == "attacked_set");
  CHECK(t.header.back() == "lower_bound_defense");
  const auto& row = t.rows[0];
  CHECK(row[0] == "none");
  CHECK(row[t.column("r_none")] == "undefined");
  CHECK(row[t.column("lower_bound_defense")] == "cascade");
  CHECK(std::abs(*csv::number(row[t.column("lower_bound")]) - 99.54) <= 0.005);
}

TEST_CASE("rounding and number formatting") {
  CHECK(round_half_away(2.675, 2) == doctest::Approx(2.68));
  CHECK(round_half_away(-2.5, 0) == -3.0);
  CHECK(round_half_away(0.125, 2) == doctest::Approx(0.13));
  CHECK(format_number(98.0, 2) == "98");
  CHECK(format_number(-0.0001, 2) == "0");
  CHECK(format_number(99.745, 2) == "99.75");
  CHECK(format_number(1.5) == "1.5");
}

TEST_CASE("accuracy matrix on a tiny repertoire") {
  // Untrained canonical blocks: the cells only need to match direct evaluation.
  ad::Model dae_m = zoo::build(zoo::dae_spec(), 1);
  ad::Model clf = zoo::build(zoo::mnist_classifier_spec(), 3);
  const defense::ClassifierBank bank{&clf, nullptr, nullptr};
  const defense::Components comps{&dae_m, nullptr, bank};
  defense::Repertoire rep;
  rep.pipelines = {defense::build_pipeline(none, comps), defense::build_pipeline(dae, comps)};

  Dataset data;
  data.inputs = testing::random_tensor({12, 784}, 5, 0.0, 1.0);
  data.labels = zoo::argmax_rows(ad::forward(clf, data.inputs));  // clean accuracy 100 at none
  auto spec = attacks::AttackSpec::defaults_for(attacks::Algorithm::fgs);
  spec.fgs_epsilon = 3.0;

  std::vector<std::string> seen;
  const auto run = build_accuracy_matrix(bank, rep, spec, data, {S({none}), S({none, dae})},
                                         [&](const std::string& s) { seen.push_back(s); });
  CHECK(run.errors.empty());
  CHECK(run.matrix.at({}, none) == 100.0);
  CHECK(run.matrix.at({}, dae) == doctest::Approx(defense::accuracy(rep.pipelines[1], bank, data)));
  REQUIRE(run.attack_sets.count("none"));
  REQUIRE(run.attack_sets.count("dae+none"));
  const auto& adv = run.attack_sets.at("dae+none");
  CHECK(adv.victims.size() == 2);
  Dataset attacked = data;
  attacked.inputs = adv.adversarial;
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(run.matrix.at(S({none, dae}), rep.pipelines[c].kind) ==
          doctest::Approx(defense::accuracy(rep.pipelines[c], bank, attacked)));
  CHECK(!seen.empty());
}
