// Drives the built CLI binary through its documented contract.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "abf/csv.hpp"
#include "abf/harness.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace abf;

namespace {

const fs::path kFixtures = ABF_FIXTURE_DIR;
const std::string kCli = ABF_CLI;

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("abf_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Result run(const std::string& args) {
  const auto d = scratch("io");
  const std::string cmd = kCli + " " + args + " >" + (d / "out").string() + " 2>" + (d / "err").string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(d / "out");
  r.err = slurp(d / "err");
  return r;
}

}  // namespace

TEST_CASE("cli: unknown subcommand prints usage and exits 2") {
  const auto r = run("frobnicate");
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run("").code == 2);
}

TEST_CASE("cli: failures exit 1 with a machine-readable error") {
  const auto r = run("metrics --matrix /nonexistent/matrix.csv");
  CHECK(r.code == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j.at("error") == "io");
  CHECK(!j.at("message").get<std::string>().empty());

  // A config whose data is missing fails before any output survives.
  const auto d = scratch("badcfg");
  std::ofstream(d / "c.ini") << "[data]\nimages = missing-images\nlabels = missing-labels\n"
                                "[output]\ndir = out\n[attack.FGS]\nepsilon = 1.5\n";
  const auto m = run("matrix --config " + (d / "c.ini").string());
  CHECK(m.code == 1);
  CHECK(nlohmann::json::parse(m.err).at("error") == "io");
  CHECK(!fs::exists(d / "out" / "matrix_FGS.csv"));
  CHECK(!fs::exists(d / "out" / "matrix.manifest.json"));

  std::ofstream(d / "bad.ini") << "[data]\nimages = a\nlabels = b\n[attack.FGS]\nepsilon_typo = 1\n";
  const auto b = run("matrix --config " + (d / "bad.ini").string());
  CHECK(b.code == 1);
  CHECK(nlohmann::json::parse(b.err).at("error") == "bad_config");
}

TEST_CASE("cli: metrics on a reference table reproduces its robustness columns") {
  const auto d = scratch("metrics");
  const auto out = d / "report.csv";
  const auto r = run("metrics --matrix " + (kFixtures / "mnist_cw.csv").string() + " --out " + out.string());
  REQUIRE(r.code == 0);
  const auto rep = csv::parse(slurp(out));
  const auto ref = csv::parse(slurp(kFixtures / "mnist_cw.csv"));
  std::size_t compared = 0;
  for (const auto& row : ref.rows) {
    if (row[0].empty()) continue;
    const auto it = std::find_if(rep.rows.begin(), rep.rows.end(), [&](const auto& x) { return x[0] == row[0]; });
    REQUIRE(it != rep.rows.end());
    for (const char* e : {"none", "dae", "cascade", "hl", "ae"}) {
      const auto pub = csv::number(row[ref.column(std::string("r_") + e)]);
      const auto& cell = (*it)[rep.column(std::string("r_") + e)];
      if (!pub) {
        CHECK(cell == "undefined");
        continue;
      }
      CHECK(std::abs(*csv::number(cell) - *pub) <= 0.02);
      ++compared;
    }
    CHECK(std::abs(*csv::number((*it)[rep.column("lower_bound")]) - *csv::number(row[ref.column("lower_bound")])) <=
          0.02);
  }
  CHECK(compared == 20);

  // The manifest names the output with its hash, and a rerun is byte-identical.
  const auto manifest = nlohmann::json::parse(slurp(out.string() + ".manifest.json"));
  CHECK(manifest.at("command") == "metrics");
  CHECK(manifest.at("outputs")[0].at("fnv1a") == harness::file_hash(out));
  CHECK(manifest.contains("config_hash"));
  CHECK(manifest.contains("wall_seconds"));
  const auto first = slurp(out);
  REQUIRE(run("metrics --matrix " + (kFixtures / "mnist_cw.csv").string() + " --out " + out.string()).code == 0);
  CHECK(slurp(out) == first);
}

TEST_CASE("cli: plan at 120 s ranks orders 4 and 12 first") {
  const auto r = run("plan --costs " + (kFixtures / "training_times.csv").string() + " --matrix " +
                     (kFixtures / "fashion_cw.csv").string() + " --budget 120");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("1. order 4: 2 steps by 117.59 s, average accuracy 80.8") != std::string::npos);
  CHECK(r.out.find("2. order 12: 2 steps by 117.59 s, average accuracy 80.8") != std::string::npos);
  CHECK(r.out.find("order_id,step,component,cumulative_seconds,defenses_added,avg_accuracy") != std::string::npos);
  const auto none = run("plan --costs " + (kFixtures / "training_times.csv").string() + " --budget 10");
  CHECK(none.code == 0);
  CHECK(none.out.find("no order completes a step") != std::string::npos);
}

TEST_CASE("cli: verify-fixtures passes offline") {
  const auto r = run("verify-fixtures --dir " + kFixtures.string());
  CHECK(r.code == 0);
  CHECK(r.out.find(" 0 failed, 0 problems") != std::string::npos);
}

TEST_CASE("cli: train and attack reproduce their outputs byte for byte") {
  // Tiny run: 100 training images, one epoch each.
  const auto d = scratch("train");
  const fs::path data = ABF_DATA_DIR;
  std::ofstream(d / "tiny.ini") << "[data]\nimages = " << (data / "images-idx3-ubyte").string()
                                << "\nlabels = " << (data / "labels-idx1-ubyte").string()
                                << "\ntest_size = 4900\neval_size = 20\nseed = 3\n"
                                   "[models]\nclassifier_epochs = 1\ndae_epochs = 1\nae_epochs = 1\n"
                                   "reduced_epochs = 1\ndae_cw_iterations = 5\n"
                                   "[matrix]\ndeployed = none, dae, cascade, hl, ae\n"
                                   "[output]\ndir = out\n"
                                   "[attack.PGD]\niterations = 5\n";
  for (const char* run_dir : {"a", "b"})
    REQUIRE(run("train --config " + (d / "tiny.ini").string() + " --out " + (d / run_dir).string()).code == 0);
  for (const char* name : harness::kModelNames) {
    const auto file = std::string(name) + ".abf";
    REQUIRE(fs::exists(d / "a" / file));
    CHECK(slurp(d / "a" / file) == slurp(d / "b" / file));
  }
  const auto manifest = nlohmann::json::parse(slurp(d / "a" / "manifest.json"));
  CHECK(manifest.at("outputs").size() == 5);
  CHECK(manifest.at("seeds")[0] == 3);

  for (const char* tag : {"x", "y"}) {
    const auto r = run("attack --config " + (d / "tiny.ini").string() + " --algorithm PGD --attacked dae+none" +
                       " --models " + (d / "a").string() + " --out " + (d / (std::string(tag) + ".advset")).string());
    REQUIRE(r.code == 0);
  }
  CHECK(slurp(d / "x.advset") == slurp(d / "y.advset"));
  CHECK(slurp(d / "x.advset.csv") == slurp(d / "y.advset.csv"));
  CHECK(fs::exists(d / "x.advset.manifest.json"));
  const auto set = attacks::load_attack_set(d / "x.advset");
  CHECK(set.meta.size() == 20);
  CHECK(set.victims.size() == 2);

  const auto missing = run("attack --config " + (d / "tiny.ini").string() +
                           " --algorithm PGD --attacked none --models " + d.string());
  CHECK(missing.code == 1);
  CHECK(nlohmann::json::parse(missing.err).at("error") == "missing_component");
}
