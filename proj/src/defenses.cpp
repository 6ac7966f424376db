#include "abf/defenses.hpp"

#include <algorithm>
#include <cctype>

#include "abf/autodiff.hpp"
#include "abf/error.hpp"
#include "abf/model_zoo.hpp"
#include "abf/rng.hpp"

namespace abf::defense {

std::string kind_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "none";
    case DefenseKind::dae: return "dae";
    case DefenseKind::cascade: return "cascade";
    case DefenseKind::hl: return "hl";
    case DefenseKind::ae: return "ae";
  }
  return "?";
}

std::string display_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "None";
    case DefenseKind::dae: return "DAE";
    case DefenseKind::cascade: return "Cascade";
    case DefenseKind::hl: return "Hidden Layer";
    case DefenseKind::ae: return "AE";
  }
  return "?";
}

DefenseKind kind_from(std::string_view name) {
  std::string n;
  for (char c : name)
    if (c != ' ' && c != '_' && c != '-') n += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (n == "hiddenlayer") return DefenseKind::hl;
  for (auto k : kAllKinds)
    if (n == kind_name(k)) return k;
  throw FormatError("bad_defense", "unknown defense '" + std::string(name) + "'");
}

std::string variant_name(ClassifierVariant v) {
  switch (v) {
    case ClassifierVariant::full: return "classifier";
    case ClassifierVariant::ae_reduced: return "ae_reduced_classifier";
    case ClassifierVariant::dae_reduced: return "dae_reduced_classifier";
  }
  return "?";
}

const ad::Model& ClassifierBank::get(ClassifierVariant v) const {
  const ad::Model* m = v == ClassifierVariant::full         ? full
                       : v == ClassifierVariant::ae_reduced ? ae_reduced
                                                            : dae_reduced;
  if (!m) throw MissingComponentError(variant_name(v));
  return *m;
}

namespace {

const ad::Model& need(const ad::Model* m, const char* name) {
  if (!m) throw MissingComponentError(name);
  return *m;
}

}  // namespace

DefensePipeline build_pipeline(DefenseKind kind, const Components& c) {
  DefensePipeline p;
  p.kind = kind;
  switch (kind) {
    case DefenseKind::none:
      p.variant = ClassifierVariant::full;
      break;
    case DefenseKind::dae:
      p.stages.push_back({"dae", need(c.dae, "dae")});
      p.variant = ClassifierVariant::full;
      break;
    case DefenseKind::cascade:
      p.stages.push_back({"dae", need(c.dae, "dae")});
      p.stages.push_back({"compression_encoder", zoo::compression_encoder(need(c.compression_ae, "compression_ae"))});
      p.variant = ClassifierVariant::ae_reduced;
      break;
    case DefenseKind::hl:
      p.stages.push_back({"dae_encoder", zoo::dae_encoder(need(c.dae, "dae"))});
      p.variant = ClassifierVariant::dae_reduced;
      break;
    case DefenseKind::ae:
      p.stages.push_back({"compression_encoder", zoo::compression_encoder(need(c.compression_ae, "compression_ae"))});
      p.variant = ClassifierVariant::ae_reduced;
      break;
  }
  const ad::Model& clf = c.classifiers.get(p.variant);
  p.input_shape = p.stages.empty() ? clf.graph.input_shape() : p.stages.front().model.graph.input_shape();
  Shape at = p.input_shape;
  for (const auto& s : p.stages) {
    if (s.model.graph.input_shape() != at)
      throw ShapeError("defense " + kind_name(kind) + ": stage " + s.name + " expects " +
                       to_string(s.model.graph.input_shape()) + " but receives " + to_string(at));
    at = s.model.graph.output_shape();
  }
  if (clf.graph.input_shape() != at)
    throw ShapeError("defense " + kind_name(kind) + ": " + variant_name(p.variant) + " expects " +
                     to_string(clf.graph.input_shape()) + " but the stages produce " + to_string(at));
  p.output_shape = at;
  return p;
}

Tensor apply(const DefensePipeline& p, const Tensor& batch) {
  Tensor x = ad::as_batch(ad::Graph(p.input_shape), batch);  // throws ShapeError on mismatch
  if (p.stages.empty()) return batch;
  for (const auto& s : p.stages) x = zoo::predict(s.model, x);
  return x;
}

std::vector<std::size_t> classify(const DefensePipeline& p, const ClassifierBank& bank,
                                  const Tensor& batch) {
  return zoo::argmax_rows(zoo::predict(bank.get(p.variant), apply(p, batch)));
}

double accuracy(const DefensePipeline& p, const ClassifierBank& bank, const Dataset& data) {
  if (data.size() == 0) throw PreconditionError("accuracy of an empty dataset");
  const auto pred = classify(p, bank, data.inputs);
  std::size_t right = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == data.labels[i];
  return 100.0 * static_cast<double>(right) / static_cast<double>(pred.size());
}

attacks::VictimSystem victim_system(const DefensePipeline& p, const ClassifierBank& bank) {
  const ad::Model& clf = bank.get(p.variant);
  if (p.stages.empty()) return {kind_name(p.kind), clf};
  ad::Model front = p.stages.front().model;
  std::string prefix = p.stages.front().name + "/";
  for (std::size_t i = 1; i < p.stages.size(); ++i) {
    front = ad::compose(front, p.stages[i].model, i == 1 ? prefix : "", p.stages[i].name + "/");
    prefix.clear();
  }
  return {kind_name(p.kind), ad::compose(front, clf, prefix, "clf/")};
}

void Repertoire::validate() const {
  if (pipelines.empty()) throw PreconditionError("repertoire is empty");
  for (std::size_t i = 0; i < pipelines.size(); ++i)
    for (std::size_t j = i + 1; j < pipelines.size(); ++j)
      if (pipelines[i].kind == pipelines[j].kind)
        throw PreconditionError("repertoire lists " + kind_name(pipelines[i].kind) + " twice");
}

const DefensePipeline& Repertoire::find(DefenseKind k) const {
  for (const auto& p : pipelines)
    if (p.kind == k) return p;
  throw MissingComponentError(kind_name(k));
}

DefenseKind random_select(const Repertoire& r, std::size_t sample_index) {
  r.validate();
  const auto i = bounded(derive_seed(r.seed, {sample_index}), r.pipelines.size());
  return r.pipelines[static_cast<std::size_t>(i)].kind;
}

}  // namespace abf::defense
