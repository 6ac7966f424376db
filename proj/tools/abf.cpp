// Command-line front end: train, attack, matrix, metrics, plan, verify-fixtures.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "abf/csv.hpp"
#include "abf/error.hpp"
#include "abf/harness.hpp"

namespace fs = std::filesystem;
using namespace abf;
using nlohmann::json;
using defense::DefenseKind;

namespace {

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

harness::Manifest manifest_for(const std::string& command, const harness::DeskConfig* config) {
  harness::Manifest m;
  m.command = command;
  if (config) {
    m.config = config->to_json();
    m.config_hash = config->hash();
    m.seeds.push_back(config->seed);
    for (const auto& a : config->attacks) m.seeds.push_back(a.seed);
  }
  return m;
}

// Models come from --models if given, else from training (through the config's cache).
harness::Infrastructure infrastructure(const harness::DeskConfig& config, const harness::Splits& splits,
                                       const std::string& models) {
  if (!models.empty()) return harness::load_infrastructure(models);
  return harness::build_infrastructure(config, splits, log_line);
}

const attacks::AttackSpec& find_attack(const harness::DeskConfig& c, const std::string& name) {
  const auto alg = attacks::algorithm_from(name);
  for (const auto& a : c.attacks)
    if (a.algorithm == alg) return a;
  throw FormatError("bad_config", "config has no [attack." + attacks::algorithm_name(alg) + "] section");
}

metrics::AccuracyMatrix read_any_matrix(const fs::path& path) {
  const auto head = csv::parse(csv::read_text(path)).header;
  for (const auto& h : head)
    if (h.rfind("acc_", 0) == 0) return harness::read_reference_table(path).matrix;
  return metrics::AccuracyMatrix::read_csv(path);
}

std::vector<DefenseKind> kinds_from(const std::string& list) {
  std::vector<DefenseKind> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(defense::kind_from(item));
  return out;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const Clock clock;
  const auto config = harness::DeskConfig::read(config_path);
  const fs::path dir = out_dir.empty() ? config.output_dir / "models" : fs::path(out_dir);
  harness::OutputGuard guard;
  const auto splits = harness::load_splits(config);
  const auto inf = harness::build_infrastructure(config, splits, log_line);
  for (const char* name : harness::kModelNames) guard.add(dir / (std::string(name) + ".abf"));
  auto m = manifest_for("train", &config);
  m.outputs = harness::save_infrastructure(inf, dir);
  json timing;
  for (const auto& [k, v] : inf.seconds) timing[k] = v;
  std::printf("classifier test accuracy %.2f%%\n", inf.classifier.provenance.test_metric.value_or(0.0));
  m.wall_seconds = clock.seconds();
  auto j = m.to_json();
  j["train_seconds"] = timing;
  const auto manifest = guard.add(dir / "manifest.json");
  csv::write_text(manifest, j.dump(2) + "\n");
  guard.commit();
  return 0;
}

int cmd_attack(const std::string& config_path, const std::string& algorithm, const std::string& attacked,
               const std::string& models, const std::string& out) {
  const Clock clock;
  const auto config = harness::DeskConfig::read(config_path);
  const auto& spec = find_attack(config, algorithm);
  const auto splits = harness::load_splits(config);
  const auto inf = infrastructure(config, splits, models);
  const auto d = metrics::parse_set(attacked);
  if (d.empty()) throw PreconditionError("attacked set must name at least one defense");
  const auto rep = inf.repertoire(std::vector<DefenseKind>(d.begin(), d.end()), config.seed);
  std::vector<attacks::VictimSystem> systems;
  for (const auto& p : rep.pipelines) systems.push_back(defense::victim_system(p, inf.bank()));
  std::vector<const attacks::VictimSystem*> ptrs;
  for (const auto& s : systems) ptrs.push_back(&s);
  const attacks::CompositeVictim composite(ptrs);

  const fs::path path = out.empty() ? config.output_dir /
                                          (attacks::algorithm_name(spec.algorithm) + "_" + attacked + ".advset")
                                    : fs::path(out);
  harness::OutputGuard guard;
  guard.add(path);
  const auto meta = guard.add(fs::path(path.string() + ".csv"));
  const auto set = attacks::generate_attack_set(spec, composite, splits.eval);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  attacks::save_attack_set(set, path);
  attacks::write_metadata_csv(set, meta);
  std::size_t ok = 0;
  for (const auto& s : set.meta) ok += s.success;
  std::printf("%s on {%s}: %zu/%zu samples misclassified by the composite\n",
              attacks::algorithm_name(spec.algorithm).c_str(), attacked.c_str(), ok, set.meta.size());
  auto m = manifest_for("attack", &config);
  m.outputs = {path, meta};
  m.wall_seconds = clock.seconds();
  m.write(guard.add(fs::path(path.string() + ".manifest.json")));
  guard.commit();
  return 0;
}

int cmd_matrix(const std::string& config_path, const std::string& algorithm, const std::string& models) {
  const Clock clock;
  const auto config = harness::DeskConfig::read(config_path);
  const auto splits = harness::load_splits(config);
  const auto inf = infrastructure(config, splits, models);
  const auto rep = inf.repertoire(config.deployed, config.seed);
  std::vector<const attacks::AttackSpec*> specs;
  if (algorithm.empty())
    for (const auto& a : config.attacks) specs.push_back(&a);
  else
    specs.push_back(&find_attack(config, algorithm));
  if (specs.empty()) throw FormatError("bad_config", "config lists no attacks");

  harness::OutputGuard guard;
  fs::create_directories(config.output_dir);
  auto m = manifest_for("matrix", &config);
  int status = 0;
  for (const auto* spec : specs) {
    const auto name = attacks::algorithm_name(spec->algorithm);
    const auto run = metrics::build_accuracy_matrix(inf.bank(), rep, *spec, splits.eval, config.attacked_sets(),
                                                    log_line);
    for (const auto& [key, err] : run.errors) {
      log_line("row {" + key + "} failed: " + err);
      status = 1;
    }
    const auto mp = guard.add(config.output_dir / ("matrix_" + name + ".csv"));
    run.matrix.write_csv(mp);
    const auto rp = guard.add(config.output_dir / ("report_" + name + ".csv"));
    csv::write_text(rp, metrics::robustness_report(run.matrix).to_csv());
    m.outputs.push_back(mp);
    m.outputs.push_back(rp);
    std::printf("%s", run.matrix.to_csv().c_str());
  }
  m.wall_seconds = clock.seconds();
  m.write(guard.add(config.output_dir / "matrix.manifest.json"));
  guard.commit();
  return status;
}

int cmd_metrics(const std::string& matrix_path, const std::string& candidates, const std::string& out) {
  const Clock clock;
  const auto matrix = read_any_matrix(matrix_path);
  std::optional<std::vector<DefenseKind>> E;
  if (!candidates.empty()) E = kinds_from(candidates);
  const auto text = metrics::robustness_report(matrix, E).to_csv();
  if (out.empty()) {
    std::printf("%s", text.c_str());
    return 0;
  }
  harness::OutputGuard guard;
  csv::write_text(guard.add(out), text);
  auto m = manifest_for("metrics", nullptr);
  m.config = {{"matrix", matrix_path}, {"matrix_fnv1a", harness::file_hash(matrix_path)}, {"candidates", candidates}};
  m.config_hash = harness::fnv1a_hex(m.config.dump());
  m.outputs = {out};
  m.wall_seconds = clock.seconds();
  m.write(guard.add(out + ".manifest.json"));
  guard.commit();
  return 0;
}

int cmd_plan(const std::string& costs, const std::string& matrix_path, double budget, const std::string& out) {
  const Clock clock;
  const auto cost = planner::CostModel::read_csv(costs);
  std::optional<metrics::AccuracyMatrix> matrix;
  if (!matrix_path.empty()) matrix = read_any_matrix(matrix_path);
  const auto pruned = planner::prune(planner::enumerate_orders());
  for (const auto& [id, rule] : pruned.eliminated)
    std::printf("order %d eliminated by %s: %s\n", id, planner::rule_name(rule).c_str(),
                planner::rule_reason(rule).c_str());
  std::vector<planner::Schedule> schedules;
  for (const auto& o : pruned.survivors)
    schedules.push_back(planner::schedule(o, cost, matrix ? &*matrix : nullptr));
  const auto rec = planner::recommend(pruned.survivors, cost, matrix ? &*matrix : nullptr, budget);
  std::printf("budget %s s\n", metrics::format_number(budget, 2).c_str());
  for (std::size_t i = 0; i < rec.ranking.size(); ++i) {
    const auto& r = rec.ranking[i];
    std::printf("%zu. order %d: %zu steps by %s s, average accuracy %s\n", i + 1, r.order_id, r.steps_completed,
                metrics::format_number(r.completion_seconds, 2).c_str(),
                r.avg_accuracy ? metrics::format_number(*r.avg_accuracy, 2).c_str() : "n/a");
  }
  if (!rec.diagnostic.empty()) std::printf("%s\n", rec.diagnostic.c_str());
  const auto text = planner::plan_csv(schedules);
  if (out.empty()) {
    std::printf("%s", text.c_str());
    return 0;
  }
  harness::OutputGuard guard;
  csv::write_text(guard.add(out), text);
  auto m = manifest_for("plan", nullptr);
  m.config = {{"costs", costs}, {"matrix", matrix_path}, {"budget", budget}};
  m.config_hash = harness::fnv1a_hex(m.config.dump());
  m.outputs = {out};
  m.wall_seconds = clock.seconds();
  m.write(guard.add(out + ".manifest.json"));
  guard.commit();
  return 0;
}

int cmd_verify(const std::string& dir, bool verbose) {
  const auto v = harness::verify_fixtures(dir);
  for (const auto& p : v.problems) std::printf("problem: %s\n", p.c_str());
  for (const auto& c : v.checks)
    if (!c.ok || verbose)
      std::printf("%s %s expected %.4f computed %.4f (tol %.2g)\n", c.ok ? "ok" : "FAIL", c.what.c_str(), c.expected,
                  c.computed, c.tolerance);
  std::printf("%zu checks, %zu failed, %zu problems, max error %.4f\n", v.checks.size(), v.failures(),
              v.problems.size(), v.max_error());
  return v.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial defense replacement toolkit"};
  app.require_subcommand(1);

  std::string config, models, out, algorithm, attacked, matrix, candidates, costs;
  std::string fixtures = ABF_DEFAULT_FIXTURES;
  double budget = 0.0;
  bool verbose = false;

  auto* train = app.add_subcommand("train", "train the defense infrastructure and write checkpoints");
  train->add_option("--config", config, "INI config")->required();
  train->add_option("--out", out, "checkpoint directory (default <output>/models)");

  auto* attack = app.add_subcommand("attack", "generate an adversarial set against a composite victim");
  attack->add_option("--config", config, "INI config")->required();
  attack->add_option("--algorithm", algorithm, "FGS, PGD, CW or DF")->required();
  attack->add_option("--attacked", attacked, "attacked set, e.g. dae+none")->required();
  attack->add_option("--models", models, "checkpoint directory from train");
  attack->add_option("--out", out, "adversarial set path");

  auto* mat = app.add_subcommand("matrix", "build accuracy matrices for the configured attacks");
  mat->add_option("--config", config, "INI config")->required();
  mat->add_option("--algorithm", algorithm, "restrict to one attack");
  mat->add_option("--models", models, "checkpoint directory from train");

  auto* met = app.add_subcommand("metrics", "robustness report from an accuracy matrix CSV");
  met->add_option("--matrix", matrix, "matrix CSV or reference table")->required();
  met->add_option("--candidates", candidates, "comma-separated replacement candidates");
  met->add_option("--out", out, "report CSV (default stdout)");

  auto* plan = app.add_subcommand("plan", "rank training orders under a time budget");
  plan->add_option("--costs", costs, "training time CSV")->required();
  plan->add_option("--matrix", matrix, "matrix CSV or reference table");
  plan->add_option("--budget", budget, "seconds")->required();
  plan->add_option("--out", out, "plan CSV (default stdout)");

  auto* verify = app.add_subcommand("verify-fixtures", "recompute the shipped reference tables");
  verify->add_option("--dir", fixtures, "fixture directory");
  verify->add_flag("--verbose", verbose, "print every check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(config, out);
    if (*attack) return cmd_attack(config, algorithm, attacked, models, out);
    if (*mat) return cmd_matrix(config, algorithm, models);
    if (*met) return cmd_metrics(matrix, candidates, out);
    if (*plan) return cmd_plan(costs, matrix, budget, out);
    if (*verify) return cmd_verify(fixtures, verbose);
  } catch (const Error& e) {
    std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 2;
}
