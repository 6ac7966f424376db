#include "abf/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "abf/csv.hpp"
#include "abf/data.hpp"
#include "abf/error.hpp"

namespace abf::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------ fixtures

ReferenceTable read_reference_table(const fs::path& path) {
  const auto t = csv::parse(csv::read_text(path));
  if (t.header.empty() || t.header[0] != "attacked_set")
    throw FormatError("malformed", path.string() + ": first column must be attacked_set");
  ReferenceTable ref;
  ref.name = path.stem().string();
  for (const auto& h : t.header)
    if (h.rfind("acc_", 0) == 0) ref.columns.push_back(defense::kind_from(h.substr(4)));
  if (ref.columns.empty()) throw FormatError("malformed", path.string() + ": no acc_ columns");
  ref.matrix = metrics::AccuracyMatrix(ref.columns);
  const bool has_bound = t.has_column("lower_bound");
  for (const auto& row : t.rows) {
    const auto d = metrics::parse_set(row[0]);
    const auto key = metrics::set_key(d);
    auto& r = ref.robustness[key];
    for (auto e : ref.columns) {
      const auto name = defense::kind_name(e);
      if (auto v = csv::number(row[t.column("acc_" + name)])) ref.matrix.set(d, e, *v);
      r.push_back(t.has_column("r_" + name) ? csv::number(row[t.column("r_" + name)]) : std::nullopt);
    }
    ref.lower_bound[key] = has_bound ? csv::number(row[t.column("lower_bound")]) : std::nullopt;
  }
  ref.matrix.validate();
  return ref;
}

bool Verification::ok() const { return problems.empty() && failures() == 0; }

std::size_t Verification::failures() const {
  return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const Check& c) { return !c.ok; }));
}

double Verification::max_error() const {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, std::abs(c.expected - c.computed));
  return m;
}

void Verification::merge(const Verification& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
  problems.insert(problems.end(), other.problems.begin(), other.problems.end());
}

namespace {

void compare(Verification& v, std::string what, double expected, double computed, double tol) {
  v.checks.push_back({std::move(what), expected, computed, tol, std::abs(expected - computed) <= tol});
}

std::string cell_name(const std::string& table, const std::string& key, const std::string& col) {
  return table + "[" + (key.empty() ? "{}" : key) + "]." + col;
}

}  // namespace

Verification verify_reference_table(const ReferenceTable& table, double tolerance) {
  Verification v;
  for (const auto& d : table.matrix.rows()) {
    if (d.empty()) continue;
    const auto key = metrics::set_key(d);
    const auto& published = table.robustness.at(key);
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
      const auto e = table.columns[j];
      const auto name = cell_name(table.name, key, "r_" + defense::kind_name(e));
      const auto r = metrics::replacement_robustness(table.matrix, d, e);
      if (r.defined() != published[j].has_value()) {
        v.problems.push_back(name + ": published " + (published[j] ? "value" : "blank") +
                             ", computed " + (r.defined() ? "value" : r.marker()));
        continue;
      }
      if (r.defined()) compare(v, name, *published[j], r.value, tolerance);
    }
    const auto& pub_bound = table.lower_bound.at(key);
    bool outside = false;
    for (auto e : table.columns) outside = outside || !metrics::contains(d, e);
    const auto name = cell_name(table.name, key, "lower_bound");
    if (!outside) {
      if (pub_bound) v.problems.push_back(name + ": published a bound for a set covering every defense");
      continue;
    }
    const auto b = metrics::universal_lower_bound(table.matrix, d, table.columns);
    if (b.value.defined() != pub_bound.has_value()) {
      v.problems.push_back(name + ": published " + (pub_bound ? "value" : "blank") + ", computed " +
                           (b.value.defined() ? "value" : b.value.marker()));
      continue;
    }
    if (b.value.defined()) compare(v, name, *pub_bound, b.value.value, tolerance);
  }
  return v;
}

Verification verify_schedules(const fs::path& schedules_csv, const planner::CostModel& cost,
                              const metrics::AccuracyMatrix& matrix, double time_tolerance,
                              double accuracy_tolerance) {
  Verification v;
  const auto t = csv::parse(csv::read_text(schedules_csv));
  const auto orders = planner::enumerate_orders();
  std::map<int, planner::Schedule> cache;
  for (const auto& row : t.rows) {
    const int id = std::stoi(row[t.column("order_id")]);
    const std::size_t step = std::stoul(row[t.column("step")]);
    const std::string where = "schedules[" + std::to_string(id) + "." + std::to_string(step) + "]";
    if (id < 0 || id >= static_cast<int>(orders.size()) || step < 1 || step > 4) {
      v.problems.push_back(where + ": no such order step");
      continue;
    }
    if (!cache.count(id)) cache.emplace(id, planner::schedule(orders[id], cost, &matrix));
    const auto& st = cache.at(id).steps[step - 1];
    if (planner::component_name(st.component) != row[t.column("component")])
      v.problems.push_back(where + ": component " + row[t.column("component")] + " vs " +
                           planner::component_name(st.component));
    if (metrics::set_key(st.added) != row[t.column("defenses_added")])
      v.problems.push_back(where + ": added {" + row[t.column("defenses_added")] + "} vs {" +
                           metrics::set_key(st.added) + "}");
    compare(v, where + ".seconds", *csv::number(row[t.column("cumulative_seconds")]), st.cumulative_seconds,
            time_tolerance);
    const auto pub = csv::number(row[t.column("avg_accuracy")]);
    if (pub.has_value() != st.avg_accuracy.has_value()) {
      v.problems.push_back(where + ": average accuracy presence differs");
      continue;
    }
    if (pub) compare(v, where + ".avg_accuracy", *pub, *st.avg_accuracy, accuracy_tolerance);
  }
  return v;
}

Verification verify_fixtures(const fs::path& dir) {
  Verification v;
  std::vector<fs::path> tables;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() == ".csv" && name != "schedules.csv" && name != "training_times.csv")
      tables.push_back(entry.path());
  }
  std::sort(tables.begin(), tables.end());
  if (tables.empty()) v.problems.push_back(dir.string() + ": no reference tables");
  for (const auto& p : tables) v.merge(verify_reference_table(read_reference_table(p)));

  const auto cost = planner::CostModel::read_csv(dir / "training_times.csv");
  const auto fashion = read_reference_table(dir / "fashion_cw.csv");
  v.merge(verify_schedules(dir / "schedules.csv", cost, fashion.matrix));

  // The shipped plan lists exactly the orders that survive pruning.
  std::set<int> shipped;
  const auto t = csv::parse(csv::read_text(dir / "schedules.csv"));
  for (const auto& row : t.rows) shipped.insert(std::stoi(row[0]));
  std::set<int> survivors;
  for (const auto& o : planner::prune(planner::enumerate_orders()).survivors) survivors.insert(o.id);
  if (shipped != survivors) v.problems.push_back("schedules: surviving order ids differ from pruning");
  return v;
}

// -------------------------------------------------------------- config

namespace {

std::size_t to_size(const std::string& section, const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(value, &used);
    if (used != value.size() || n < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(n);
  } catch (const std::logic_error&) {
    throw FormatError("bad_config", "[" + section + "] " + key + ": expected a count, got '" + value + "'");
  }
}

double to_double(const std::string& section, const std::string& key, const std::string& value) {
  const auto v = csv::number(value);
  if (!v) throw FormatError("bad_config", "[" + section + "] " + key + ": empty value");
  return *v;
}

bool to_bool(const std::string& section, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw FormatError("bad_config", "[" + section + "] " + key + ": expected a boolean, got '" + value + "'");
}

// INI values take the JSON type of the spec default for the same key.
attacks::AttackSpec attack_from_section(const std::string& section, const std::string& algorithm,
                                        const boost::property_tree::ptree& keys) {
  const auto defaults = attacks::AttackSpec::defaults_for(attacks::algorithm_from(algorithm)).to_json();
  json j = defaults;
  for (const auto& [key, node] : keys) {
    const auto value = node.get_value<std::string>();
    if (!defaults.contains(key) || key == "algorithm")
      throw FormatError("bad_config", "[" + section + "] unknown key '" + key + "'");
    const auto& d = defaults.at(key);
    if (d.is_boolean()) j[key] = to_bool(section, key, value);
    else if (d.is_number_unsigned()) j[key] = static_cast<std::uint64_t>(to_size(section, key, value));
    else j[key] = to_double(section, key, value);
  }
  auto spec = attacks::AttackSpec::from_json(j);
  spec.validate();
  return spec;
}

}  // namespace

std::vector<metrics::DefenseSet> DeskConfig::attacked_sets() const {
  if (attacked == "all") return metrics::all_attacked_sets(deployed);
  std::vector<metrics::DefenseSet> out;
  if (attacked == "singletons") {
    for (auto e : deployed) out.push_back({e});
    return out;
  }
  std::stringstream in(attacked);
  std::string key;
  while (std::getline(in, key, ';')) {
    key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
    if (key.empty()) continue;
    auto d = metrics::parse_set(key);
    for (auto e : d)
      if (std::find(deployed.begin(), deployed.end(), e) == deployed.end())
        throw FormatError("bad_config", "attacked set {" + key + "} names an undeployed defense");
    out.push_back(std::move(d));
  }
  if (out.empty()) throw FormatError("bad_config", "no attacked sets");
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string DeskConfig::hash() const { return fnv1a_hex(text); }

json DeskConfig::to_json() const {
  json a = json::array();
  for (const auto& s : attacks) a.push_back(s.to_json());
  json dep = json::array();
  for (auto e : deployed) dep.push_back(defense::kind_name(e));
  return {{"images", images.string()},
          {"labels", labels.string()},
          {"test_size", test_size},
          {"eval_size", eval_size},
          {"seed", seed},
          {"classifier_epochs", classifier_epochs},
          {"dae_epochs", dae_epochs},
          {"ae_epochs", ae_epochs},
          {"reduced_epochs", reduced_epochs},
          {"dae_mix_ratio", dae_mix_ratio},
          {"dae_cw_iterations", dae_cw_iterations},
          {"attacks", a},
          {"deployed", dep},
          {"attacked", attacked},
          {"output_dir", output_dir.string()},
          {"cache_dir", cache_dir.string()}};
}

DeskConfig DeskConfig::parse(const std::string& text, const fs::path& base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw FormatError("bad_config", std::string("config: ") + e.what());
  }
  DeskConfig c;
  c.text = text;
  auto path = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base / p;
  };
  // The INI reader drops sections without keys; an empty [attack.X] still means X at its defaults.
  {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      const auto a = line.find_first_not_of(" \t"), b = line.find_last_not_of(" \t\r");
      if (a == std::string::npos || line[a] != '[' || line[b] != ']') continue;
      const auto name = line.substr(a + 1, b - a - 1);
      if (tree.find(name) == tree.not_found()) tree.push_back({name, pt::ptree()});
    }
  }
  const std::set<std::string> known = {"data", "models", "matrix", "output"};
  for (const auto& [section, keys] : tree) {
    if (section.rfind("attack.", 0) == 0) {
      c.attacks.push_back(attack_from_section(section, section.substr(7), keys));
      continue;
    }
    if (!known.count(section)) throw FormatError("bad_config", "unknown section [" + section + "]");
    for (const auto& [key, node] : keys) {
      const auto v = node.get_value<std::string>();
      const std::string k = section + "." + key;
      if (k == "data.images") c.images = path(v);
      else if (k == "data.labels") c.labels = path(v);
      else if (k == "data.test_size") c.test_size = to_size(section, key, v);
      else if (k == "data.eval_size") c.eval_size = to_size(section, key, v);
      else if (k == "data.seed") c.seed = to_size(section, key, v);
      else if (k == "models.classifier_epochs") c.classifier_epochs = to_size(section, key, v);
      else if (k == "models.dae_epochs") c.dae_epochs = to_size(section, key, v);
      else if (k == "models.ae_epochs") c.ae_epochs = to_size(section, key, v);
      else if (k == "models.reduced_epochs") c.reduced_epochs = to_size(section, key, v);
      else if (k == "models.dae_mix_ratio") c.dae_mix_ratio = to_double(section, key, v);
      else if (k == "models.dae_cw_iterations") c.dae_cw_iterations = to_size(section, key, v);
      else if (k == "matrix.deployed") {
        std::stringstream list(v);
        std::string item;
        while (std::getline(list, item, ',')) {
          item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
          if (!item.empty()) c.deployed.push_back(defense::kind_from(item));
        }
      } else if (k == "matrix.attacked") c.attacked = v;
      else if (k == "output.dir") c.output_dir = path(v);
      else if (k == "output.cache") c.cache_dir = v.empty() ? fs::path() : path(v);
      else throw FormatError("bad_config", "[" + section + "] unknown key '" + key + "'");
    }
  }
  if (c.images.empty() || c.labels.empty()) throw FormatError("bad_config", "[data] needs images and labels");
  if (c.eval_size == 0 || c.eval_size > c.test_size)
    throw FormatError("bad_config", "[data] eval_size must lie in [1, test_size]");
  if (!(c.dae_mix_ratio >= 0.0 && c.dae_mix_ratio <= 1.0))
    throw FormatError("bad_config", "[models] dae_mix_ratio must lie in [0,1]");
  if (c.deployed.empty())
    c.deployed.assign(defense::kAllKinds.begin(), defense::kAllKinds.end());
  std::set<DefenseKind> seen(c.deployed.begin(), c.deployed.end());
  if (seen.size() != c.deployed.size()) throw FormatError("bad_config", "[matrix] deployed lists a defense twice");
  (void)c.attacked_sets();  // validates the attacked list
  return c;
}

DeskConfig DeskConfig::read(const fs::path& path) {
  return parse(csv::read_text(path), path.parent_path());
}

Splits load_splits(const DeskConfig& config) {
  const auto all = data::load_idx(config.images, config.labels);
  if (config.test_size >= all.size())
    throw PreconditionError("test_size " + std::to_string(config.test_size) + " leaves no training data");
  auto [train, test] = data::split(all, config.test_size, config.seed);
  Splits s{std::move(train), std::move(test), {}};
  s.eval = data::subsample(s.test, config.eval_size, config.seed + 1);
  s.eval.split = "eval";
  return s;
}

// --------------------------------------------------------- infrastructure

defense::ClassifierBank Infrastructure::bank() const {
  return {&classifier.model, &ae_reduced.model, &dae_reduced.model};
}

defense::Components Infrastructure::components() const {
  return {&dae.model, &compression_ae.model, bank()};
}

defense::Repertoire Infrastructure::repertoire(const std::vector<DefenseKind>& kinds, std::uint64_t seed) const {
  defense::Repertoire r;
  r.seed = seed;
  for (auto k : kinds) r.pipelines.push_back(defense::build_pipeline(k, components()));
  r.validate();
  return r;
}

namespace {

void save_reproducible(zoo::TrainedModel m, const fs::path& path) {
  m.provenance.train_seconds = 0.0;
  zoo::save(m, path);
}

struct Cache {
  fs::path dir;
  Log log;
  std::vector<std::string>* loaded;
  std::map<std::string, double>* seconds;

  // Trains through `make` unless a checkpoint under the same key exists.
  zoo::TrainedModel get(const std::string& name, const std::string& key,
                        const std::function<zoo::TrainedModel()>& make) const {
    const fs::path file = dir.empty() ? fs::path() : dir / (name + "-" + key + ".abf");
    if (!file.empty() && fs::exists(file)) {
      if (log) log("cache hit: " + file.filename().string());
      loaded->push_back(name);
      return zoo::load(file);
    }
    if (log) log("training " + name);
    auto m = make();
    (*seconds)[name] = m.provenance.train_seconds;
    if (!file.empty()) {
      fs::create_directories(dir);
      save_reproducible(m, file);
    }
    return m;
  }
};

std::string key_of(std::initializer_list<std::string> parts) {
  std::string s;
  for (const auto& p : parts) s += p + '\x1f';
  return fnv1a_hex(s);
}

}  // namespace

Infrastructure build_infrastructure(const DeskConfig& config, const Splits& data, const Log& log) {
  Infrastructure inf;
  const Cache cache{config.cache_dir, log, &inf.loaded, &inf.seconds};
  const auto clf_train = zoo::TrainData::classification(data.train);
  const auto clf_test = zoo::TrainData::classification(data.test);
  const std::string base = key_of({data.train.descriptor, std::to_string(data.train.size()),
                                   std::to_string(config.seed)});
  auto epoch_log = [&](const std::string& name) {
    zoo::TrainOptions o;
    if (log)
      o.on_epoch = [log, name](std::size_t epoch, double loss) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  %s epoch %zu loss %.6f", name.c_str(), epoch + 1, loss);
        log(buf);
      };
    return o;
  };

  auto clf_spec = zoo::mnist_classifier_spec();
  clf_spec.epochs = config.classifier_epochs;
  const std::string clf_key = key_of({base, clf_spec.hash()});
  inf.classifier = cache.get("classifier", clf_key, [&] {
    auto o = epoch_log("classifier");
    o.test = &clf_test;
    return zoo::train(clf_spec, clf_train, config.seed, o);
  });

  // The DAE learns to map FGS, DeepFool and CW perturbations of the training
  // inputs, crafted against the bare classifier, back to the clean inputs.
  auto dae_spec = zoo::dae_spec();
  dae_spec.epochs = config.dae_epochs;
  auto fgs = attacks::AttackSpec::defaults_for(attacks::Algorithm::fgs);
  fgs.fgs_epsilon = 1.5;
  auto df = attacks::AttackSpec::defaults_for(attacks::Algorithm::deepfool);
  auto cw = attacks::AttackSpec::defaults_for(attacks::Algorithm::cw);
  cw.cw_max_iterations = config.dae_cw_iterations;
  cw.cw_batch_size = 100;
  cw.seed = config.seed;
  char mix[32];
  std::snprintf(mix, sizeof mix, "%.17g", config.dae_mix_ratio);
  const std::string dae_key = key_of({clf_key, dae_spec.hash(), mix, fgs.to_json().dump(),
                                      df.to_json().dump(), cw.to_json().dump()});
  inf.dae = cache.get("dae", dae_key, [&] {
    const attacks::VictimSystem victim{"clf", inf.classifier.model};
    const attacks::CompositeVictim composite({&victim});
    std::vector<zoo::AttackGenerator> gens;
    for (const auto* s : {&fgs, &df, &cw})
      gens.push_back({attacks::algorithm_name(s->algorithm), [&composite, s](const Tensor& x, std::span<const std::size_t> y) {
                        return attacks::run(composite, x, y, *s).adversarial;
                      }});
    const auto t0 = std::chrono::steady_clock::now();
    const auto set = zoo::make_dae_training_set(data.train, gens, config.dae_mix_ratio, config.seed);
    inf.dae_set_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "  dae training set built in %.1f s", inf.dae_set_seconds);
      log(buf);
    }
    auto m = zoo::train(dae_spec, set.data, config.seed + 1, epoch_log("dae"));
    m.provenance.note = "mix_ratio=" + std::string(mix) + " generators=FGS,DF,CW";
    return m;
  });

  auto ae_spec = zoo::compression_ae_spec();
  ae_spec.epochs = config.ae_epochs;
  const std::string ae_key = key_of({base, ae_spec.hash()});
  inf.compression_ae = cache.get("compression_ae", ae_key, [&] {
    return zoo::train(ae_spec, zoo::TrainData::autoencoding(data.train.inputs), config.seed + 2,
                      epoch_log("compression_ae"));
  });

  const auto reduced = [&](const std::string& name, const std::string& upstream, const ad::Model& encoder,
                           std::uint64_t seed) {
    const std::string key = key_of({clf_key, upstream, std::to_string(config.reduced_epochs)});
    return cache.get(name, key, [&] {
      zoo::ReducedClassifierRecipe r;
      r.method = zoo::ReductionMethod::retrain;
      r.source = &inf.classifier;
      r.compressor = &encoder;
      r.reduced_input_shape = encoder.graph.output_shape();
      r.epochs = config.reduced_epochs;
      return zoo::derive_reduced_classifier(r, data.train, seed, &clf_test);
    });
  };
  const auto ae_enc = zoo::compression_encoder(inf.compression_ae.model);
  const auto dae_enc = zoo::dae_encoder(inf.dae.model);
  inf.ae_reduced = reduced("ae_reduced_classifier", ae_key, ae_enc, config.seed + 3);
  inf.dae_reduced = reduced("dae_reduced_classifier", dae_key, dae_enc, config.seed + 4);
  return inf;
}

namespace {

template <class Inf>
auto& slot(Inf& inf, std::string_view name) {
  if (name == "classifier") return inf.classifier;
  if (name == "dae") return inf.dae;
  if (name == "compression_ae") return inf.compression_ae;
  if (name == "ae_reduced_classifier") return inf.ae_reduced;
  return inf.dae_reduced;
}

}  // namespace

std::vector<fs::path> save_infrastructure(const Infrastructure& inf, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (const char* name : kModelNames) {
    out.push_back(dir / (std::string(name) + ".abf"));
    save_reproducible(slot(inf, name), out.back());
  }
  return out;
}

Infrastructure load_infrastructure(const fs::path& dir) {
  Infrastructure inf;
  for (const char* name : kModelNames) {
    const auto p = dir / (std::string(name) + ".abf");
    if (!fs::exists(p)) throw MissingComponentError(name);
    slot(inf, name) = zoo::load(p);
    inf.loaded.push_back(name);
  }
  return inf;
}

// ------------------------------------------------------------ outputs

OutputGuard::~OutputGuard() {
  if (committed_) return;
  for (const auto& p : paths_) {
    std::error_code ec;
    fs::remove(p, ec);
    fs::remove(fs::path(p.string() + ".partial"), ec);
  }
}

const fs::path& OutputGuard::add(fs::path p) {
  paths_.push_back(std::move(p));
  return paths_.back();
}

std::string file_hash(const fs::path& path) { return fnv1a_hex(csv::read_text(path)); }

json Manifest::to_json() const {
  json outs = json::array();
  for (const auto& p : outputs) {
    json o = {{"path", p.string()}};
    if (fs::exists(p)) {
      o["bytes"] = fs::file_size(p);
      o["fnv1a"] = file_hash(p);
    }
    outs.push_back(o);
  }
  return {{"command", command},  {"config", config},        {"config_hash", config_hash},
          {"seeds", seeds},      {"wall_seconds", wall_seconds}, {"outputs", outs}};
}

void Manifest::write(const fs::path& path) const { csv::write_text(path, to_json().dump(2) + "\n"); }

}  // namespace abf::harness
