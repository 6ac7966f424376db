#include <fstream>

#include "abf/csv.hpp"
#include "abf/error.hpp"
#include "abf/harness.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace abf;
using namespace abf::harness;

namespace {

const fs::path kFixtures = ABF_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("abf_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kConfig = R"(
[data]
images = imgs
labels = /abs/labels
test_size = 500
eval_size = 50
seed = 9

[models]
dae_mix_ratio = 0.25

[matrix]
deployed = none, DAE, hidden layer
attacked = none; dae+hl

[attack.PGD]
epsilon = 0.5
iterations = 7
early_stop = true

[attack.CW]
batch_size = 100
)";

}  // namespace

TEST_CASE("fnv1a known vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("config parsing") {
  const auto c = DeskConfig::parse(kConfig, "/base");
  CHECK(c.images == fs::path("/base/imgs"));
  CHECK(c.labels == fs::path("/abs/labels"));
  CHECK(c.test_size == 500);
  CHECK(c.eval_size == 50);
  CHECK(c.seed == 9);
  CHECK(c.dae_mix_ratio == 0.25);
  CHECK(c.classifier_epochs == 20);
  CHECK(c.deployed == std::vector<DefenseKind>{DefenseKind::none, DefenseKind::dae, DefenseKind::hl});
  const auto sets = c.attacked_sets();
  REQUIRE(sets.size() == 2);
  CHECK(metrics::set_key(sets[1]) == "dae+hl");
  REQUIRE(c.attacks.size() == 2);
  const auto& pgd = c.attacks[0].algorithm == attacks::Algorithm::pgd ? c.attacks[0] : c.attacks[1];
  CHECK(pgd.pgd_epsilon == 0.5);
  CHECK(pgd.pgd_iterations == 7);
  CHECK(pgd.pgd_early_stop);
  CHECK(pgd.pgd_step == 0.01);
  CHECK(c.hash() == fnv1a_hex(kConfig));
  CHECK(c.to_json().at("deployed").size() == 3);

  auto with = [](const std::string& extra) { return std::string(kConfig) + extra; };
  CHECK_THROWS_AS(DeskConfig::parse(with("[bogus]\nx = 1\n")), FormatError);
  CHECK_THROWS_AS(DeskConfig::parse(with("[attack.FGS]\nepsilon = big\n")), FormatError);
  CHECK_THROWS_AS(DeskConfig::parse(with("[attack.FGS]\nsign = maybe\n")), FormatError);
  CHECK_THROWS_AS(DeskConfig::parse(with("[attack.XYZ]\n")), FormatError);
  CHECK(DeskConfig::parse(with("[attack.DF]\n")).attacks.size() == 3);
  CHECK_THROWS(DeskConfig::parse(with("[attack.DF]\nmax_iterations = 0\n")));
  CHECK_THROWS_AS(DeskConfig::parse("[data]\nimages = a\n"), FormatError);

  auto c2 = DeskConfig::parse("[data]\nimages = a\nlabels = b\n[matrix]\nattacked = all\n");
  CHECK(c2.deployed.size() == 5);
  CHECK(c2.attacked_sets().size() == 31);
  CHECK_THROWS_AS(DeskConfig::parse("[data]\nimages = a\nlabels = b\n[matrix]\ndeployed = none\nattacked = dae\n"),
                  FormatError);
  CHECK_THROWS_AS(DeskConfig::parse("[data]\nimages = a\nlabels = b\n[matrix]\ndeployed = none, none\n"),
                  FormatError);
}

TEST_CASE("the shipped desk config parses") {
  const auto c = DeskConfig::read(fs::path(ABF_SOURCE_DIR) / "configs" / "desk.ini");
  CHECK(fs::exists(c.images));
  CHECK(c.attacks.size() == 4);
  CHECK(c.deployed.size() == 5);
}

TEST_CASE("output guard removes uncommitted outputs") {
  const auto d = scratch("guard");
  {
    OutputGuard g;
    std::ofstream(g.add(d / "a.csv")) << "x";
    std::ofstream(d / "b.csv.partial") << "x";
    g.add(d / "b.csv");
  }
  CHECK(!fs::exists(d / "a.csv"));
  CHECK(!fs::exists(d / "b.csv.partial"));
  {
    OutputGuard g;
    std::ofstream(g.add(d / "c.csv")) << "x";
    g.commit();
  }
  CHECK(fs::exists(d / "c.csv"));
}

TEST_CASE("reference verification catches a tampered cell") {
  auto t = read_reference_table(kFixtures / "fashion_cw.csv");
  CHECK(t.columns.size() == 5);
  CHECK(verify_reference_table(t).ok());
  t.robustness.at("none")[1] = 97.9;  // published 98
  auto v = verify_reference_table(t);
  CHECK(v.failures() == 1);
  CHECK(v.max_error() == doctest::Approx(0.1).epsilon(0.2));
  t.robustness.at("none")[1] = std::nullopt;
  v = verify_reference_table(t);
  CHECK(v.problems.size() == 1);
}

TEST_CASE("fixture verification over the shipped directory") {
  const auto v = verify_fixtures(kFixtures);
  CHECK(v.problems.empty());
  CHECK(v.failures() == 0);
  CHECK(v.checks.size() > 450);
  CHECK(v.max_error() <= 0.02);

  // A schedules file with a wrong time is reported.
  const auto d = scratch("fixtures");
  for (const auto& e : fs::directory_iterator(kFixtures)) fs::copy_file(e.path(), d / e.path().filename());
  auto text = csv::read_text(d / "schedules.csv");
  text.replace(text.find("117.59"), 6, "117.60");
  csv::write_text(d / "schedules.csv", text);
  CHECK(!verify_fixtures(d).ok());
}

TEST_CASE("manifest lists outputs with sizes and hashes") {
  const auto d = scratch("manifest");
  csv::write_text(d / "x.csv", "a,b\n1,2\n");
  Manifest m;
  m.command = "metrics";
  m.seeds = {1, 2};
  m.outputs = {d / "x.csv"};
  m.write(d / "m.json");
  const auto j = nlohmann::json::parse(csv::read_text(d / "m.json"));
  CHECK(j.at("outputs")[0].at("bytes") == 8);
  CHECK(j.at("outputs")[0].at("fnv1a") == fnv1a_hex("a,b\n1,2\n"));
  CHECK(j.at("seeds").size() == 2);
}

TEST_CASE("missing checkpoints name the component") {
  const auto d = scratch("empty_models");
  try {
    (void)load_infrastructure(d);
    FAIL("expected MissingComponentError");
  } catch (const MissingComponentError& e) {
    CHECK(e.name == "classifier");
  }
}
