#include "abf/model_zoo.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "abf/container.hpp"
#include "abf/error.hpp"
#include "abf/rng.hpp"

namespace abf {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.inputs = stack_rows(inputs, indices);
  for (auto i : indices) d.labels.push_back(labels.at(i));
  d.classes = classes;
  d.split = split;
  d.descriptor = descriptor;
  return d;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> c(classes, 0);
  for (auto l : labels) ++c.at(l);
  return c;
}

}  // namespace abf

namespace abf::zoo {

namespace {

std::string optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  return "?";
}

OptimizerKind optimizer_from(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw FormatError("bad_spec", "unknown optimizer '" + s + "'");
}

std::string loss_name(ad::LossKind k) { return k == ad::LossKind::mse ? "mse" : "cross_entropy"; }

ad::LossKind loss_from(const std::string& s) {
  if (s == "mse") return ad::LossKind::mse;
  if (s == "cross_entropy") return ad::LossKind::cross_entropy;
  throw FormatError("bad_spec", "unknown loss '" + s + "'");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic Fisher-Yates over a counter-based stream.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded(derive_seed(seed, {i}), i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

json provenance_to_json(const Provenance& p) {
  return {{"spec_hash", p.spec_hash},       {"seed", p.seed},
          {"train_seconds", p.train_seconds}, {"epoch_losses", p.epoch_losses},
          {"metric", p.metric},             {"train_metric", p.train_metric},
          {"test_metric", p.test_metric ? json(*p.test_metric) : json(nullptr)},
          {"note", p.note}};
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.spec_hash = j.at("spec_hash").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.train_seconds = j.at("train_seconds").get<double>();
  p.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
  p.metric = j.at("metric").get<std::string>();
  p.train_metric = j.at("train_metric").get<double>();
  if (!j.at("test_metric").is_null()) p.test_metric = j.at("test_metric").get<double>();
  p.note = j.value("note", "");
  return p;
}

struct OptimizerState {
  std::vector<Tensor> m, v;
  std::size_t step = 0;
};

void optimizer_step(const OptimizerSpec& o, ad::ParameterStore& params,
                    const ad::ParameterStore& grads, OptimizerState& st) {
  const auto& names = params.names();
  if (st.m.empty()) {
    for (const auto& n : names) {
      st.m.emplace_back(params.at(n).value.shape(), 0.0);
      st.v.emplace_back(params.at(n).value.shape(), 0.0);
    }
  }
  ++st.step;
  const double lr = o.learning_rate / (1.0 + o.decay * static_cast<double>(st.step - 1));
  const double t = static_cast<double>(st.step);
  const double adam_lr = lr * std::sqrt(1.0 - std::pow(o.beta2, t)) / (1.0 - std::pow(o.beta1, t));
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto& p = params.at(names[k]);
    if (!p.trainable) continue;
    double* w = p.value.raw();
    const double* g = grads.at(names[k]).value.raw();
    double* m = st.m[k].raw();
    double* v = st.v[k].raw();
    const std::size_t n = p.value.size();
    switch (o.kind) {
      case OptimizerKind::adam:
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
          v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
          w[i] -= adam_lr * m[i] / (std::sqrt(v[i]) + o.epsilon);
        }
        break;
      case OptimizerKind::rmsprop:
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = o.rho * v[i] + (1.0 - o.rho) * g[i] * g[i];
          w[i] -= lr * g[i] / (std::sqrt(v[i]) + o.epsilon);
        }
        break;
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = o.momentum * m[i] - lr * g[i];
          w[i] += m[i];
        }
        break;
    }
  }
}

double evaluate_metric(const ad::Model& model, const ModelSpec& spec, const TrainData& d) {
  return spec.loss == ad::LossKind::cross_entropy ? accuracy(model, d.inputs, d.labels)
                                                  : mean_squared_error(model, d.inputs, d.targets);
}

LayerSpec layer(std::string op, std::size_t units = 0) {
  LayerSpec l;
  l.op = std::move(op);
  l.units = units;
  return l;
}

}  // namespace

// ------------------------------------------------------------------ spec

void ModelSpec::validate() const {
  if (epochs < 1) throw PreconditionError("epochs must be >= 1");
  if (batch_size < 1) throw PreconditionError("batch size must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw PreconditionError("learning rate must be > 0");
  if (layers.empty()) throw PreconditionError("model spec has no layers");
  const Shape out = output_shape();  // shape-checks the chain
  if (loss == ad::LossKind::cross_entropy && out.size() != 1)
    throw ShapeError("cross-entropy needs rank-1 logits, spec outputs " + to_string(out));
}

Shape ModelSpec::output_shape() const { return build(*this, 0).graph.output_shape(); }

json ModelSpec::to_json() const {
  json ls = json::array();
  for (const auto& l : layers) {
    json j = {{"op", l.op}};
    if (l.op == "dense") j["units"] = l.units;
    if (l.op == "conv2d") {
      j["filters"] = l.filters;
      j["kernel"] = l.kernel;
      j["same_padding"] = l.same_padding;
    }
    if (l.op == "dropout") j["rate"] = l.rate;
    if (l.op == "reshape") j["target"] = l.target;
    ls.push_back(j);
  }
  return {{"name", name},
          {"input_shape", input_shape},
          {"layers", ls},
          {"loss", loss_name(loss)},
          {"optimizer",
           {{"kind", optimizer_name(optimizer.kind)},
            {"learning_rate", optimizer.learning_rate},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"rho", optimizer.rho},
            {"momentum", optimizer.momentum},
            {"epsilon", optimizer.epsilon},
            {"decay", optimizer.decay}}},
          {"batch_size", batch_size},
          {"epochs", epochs}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  try {
    ModelSpec s;
    s.name = j.value("name", "");
    s.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& l : j.at("layers")) {
      LayerSpec ls;
      ls.op = l.at("op").get<std::string>();
      ls.units = l.value("units", std::size_t{0});
      ls.filters = l.value("filters", std::size_t{0});
      ls.kernel = l.value("kernel", std::size_t{3});
      ls.same_padding = l.value("same_padding", true);
      ls.rate = l.value("rate", 0.0);
      if (l.contains("target")) ls.target = l.at("target").get<Shape>();
      s.layers.push_back(ls);
    }
    s.loss = loss_from(j.value("loss", "cross_entropy"));
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      s.optimizer.kind = optimizer_from(o.value("kind", "adam"));
      s.optimizer.learning_rate = o.value("learning_rate", 0.001);
      s.optimizer.beta1 = o.value("beta1", 0.9);
      s.optimizer.beta2 = o.value("beta2", 0.999);
      s.optimizer.rho = o.value("rho", 0.9);
      s.optimizer.momentum = o.value("momentum", 0.0);
      s.optimizer.epsilon = o.value("epsilon", 1e-7);
      s.optimizer.decay = o.value("decay", 0.0);
    }
    s.batch_size = j.value("batch_size", std::size_t{200});
    s.epochs = j.value("epochs", std::size_t{10});
    return s;
  } catch (const json::exception& e) {
    throw FormatError("bad_spec", std::string("model spec: ") + e.what());
  }
}

std::string ModelSpec::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

ad::Model build(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_shape.empty()) throw ShapeError("model spec has no input shape", 0);
  ad::ModelBuilder b(spec.input_shape, seed);
  std::size_t index = 0;
  bool seen_param_layer = false;
  for (const auto& l : spec.layers) {
    const bool param_layer = l.op == "dense" || l.op == "conv2d";
    if (param_layer) {
      if (seen_param_layer) ++index;
      seen_param_layer = true;
      b.layer(index);
    }
    if (l.op == "dense") b.dense(l.units);
    else if (l.op == "conv2d") b.conv2d(l.filters, l.kernel, l.same_padding);
    else if (l.op == "max_pool2") b.max_pool2();
    else if (l.op == "upsample2") b.upsample2();
    else if (l.op == "relu") b.relu();
    else if (l.op == "elu") b.elu();
    else if (l.op == "sigmoid") b.sigmoid();
    else if (l.op == "softmax") b.softmax();
    else if (l.op == "batch_norm") b.batch_norm();
    else if (l.op == "dropout") b.dropout(l.rate);
    else if (l.op == "reshape") b.reshape(l.target);
    else if (l.op == "flatten") b.flatten();
    else throw FormatError("bad_spec", "unsupported layer op '" + l.op + "'");
  }
  return std::move(b).build();
}

// --------------------------------------------------------------- training

void fit(ad::Model& model, const ModelSpec& recipe, const TrainData& data, std::uint64_t seed,
         Provenance& provenance, const TrainOptions& options) {
  if (recipe.epochs < 1) throw PreconditionError("epochs must be >= 1");
  if (recipe.batch_size < 1) throw PreconditionError("batch size must be >= 1");
  if (!(recipe.optimizer.learning_rate > 0.0)) throw PreconditionError("learning rate must be > 0");
  if (data.inputs.empty() || data.size() == 0) throw PreconditionError("empty training set");
  if (data.inputs.sample_shape() != model.graph.input_shape())
    throw ShapeError("training inputs " + to_string(data.inputs.sample_shape()) +
                         " do not match model input " + to_string(model.graph.input_shape()),
                     0);
  const bool ce = recipe.loss == ad::LossKind::cross_entropy;
  if (ce && data.labels.size() != data.size()) throw PreconditionError("labels missing");
  if (!ce && data.targets.batch() != data.size()) throw PreconditionError("targets missing");

  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = data.size();
  OptimizerState state;
  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    const auto order = permutation(n, derive_seed(seed, {1, epoch}));
    double total = 0.0;
    for (std::size_t lo = 0, b = 0; lo < n; lo += recipe.batch_size, ++b) {
      const std::size_t hi = std::min(n, lo + recipe.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const Tensor xb = stack_rows(data.inputs, idx);
      ad::LossSpec loss;
      if (ce) {
        std::vector<std::size_t> yb;
        for (auto i : idx) yb.push_back(data.labels[i]);
        loss = ad::LossSpec::cross_entropy(std::move(yb));
      } else {
        loss = ad::LossSpec::mse(stack_rows(data.targets, idx));
      }
      const ad::ForwardOptions fo{true, derive_seed(seed, {2, epoch, b})};
      const auto r = ad::grad_params(model.graph, model.params, xb, loss, fo);
      if (!std::isfinite(r.loss))
        throw TrainingDiverged(epoch, "training diverged (non-finite loss) in epoch " +
                                          std::to_string(epoch));
      optimizer_step(recipe.optimizer, model.params, r.grads, state);
      total += r.loss * static_cast<double>(hi - lo);
    }
    const double mean = total / static_cast<double>(n);
    provenance.epoch_losses.push_back(mean);
    if (options.on_epoch) options.on_epoch(epoch, mean);
  }
  provenance.train_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  provenance.seed = seed;
  provenance.metric = ce ? "accuracy" : "mse";
  provenance.train_metric = evaluate_metric(model, recipe, data);
  if (options.test) provenance.test_metric = evaluate_metric(model, recipe, *options.test);
}

TrainedModel train(const ModelSpec& spec, const TrainData& data, std::uint64_t seed,
                   const TrainOptions& options) {
  spec.validate();
  TrainedModel t{spec, build(spec, derive_seed(seed, {0})), {}};
  t.provenance.spec_hash = spec.hash();
  fit(t.model, spec, data, seed, t.provenance, options);
  return t;
}

Tensor predict(const ad::Model& model, const Tensor& inputs, std::size_t batch) {
  const Tensor x = ad::as_batch(model.graph, inputs);
  const std::size_t n = x.batch();
  Tensor out = with_batch(model.graph.output_shape(), n);
  const std::size_t width = out.sample_size();
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t hi = std::min(n, lo + batch);
    idx.clear();
    for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    const Tensor y = ad::forward(model, stack_rows(x, idx));
    std::copy(y.storage().begin(), y.storage().end(), out.raw() + lo * width);
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out;
  const std::size_t k = logits.sample_size();
  for (std::size_t r = 0; r < logits.batch(); ++r) {
    const auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i)
      if (row[i] > row[best]) best = i;  // strict: ties keep the lowest index
    out.push_back(best);
  }
  return out;
}

double accuracy(const ad::Model& model, const Tensor& inputs, std::span<const std::size_t> labels) {
  const auto pred = argmax_rows(predict(model, inputs));
  if (pred.size() != labels.size()) throw PreconditionError("accuracy: label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

double mean_squared_error(const ad::Model& model, const Tensor& inputs, const Tensor& targets) {
  const Tensor y = predict(model, inputs);
  if (y.size() != targets.size()) throw ShapeError("mse: target size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - targets[i]) * (y[i] - targets[i]);
  return s / static_cast<double>(y.size());
}

// --------------------------------------------------------------- catalogue

ModelSpec mnist_classifier_spec() {
  ModelSpec s;
  s.name = "mlp-784-128-10";
  s.input_shape = {784};
  s.layers = {layer("dense", 128), layer("relu"), layer("dense", 10)};
  s.batch_size = 200;
  s.epochs = 20;
  return s;
}

ModelSpec dae_spec() {
  ModelSpec s;
  s.name = "dae-784-256-128-81-128-256-784";
  s.input_shape = {784};
  for (std::size_t u : {256, 128, 81, 128, 256, 784}) s.layers.push_back(layer("dense", u));
  s.layers.push_back(layer("sigmoid"));
  s.loss = ad::LossKind::mse;
  s.batch_size = 200;
  s.epochs = 150;
  return s;
}

ModelSpec compression_ae_spec() {
  ModelSpec s;
  s.name = "ae-784-81-784";
  s.input_shape = {784};
  s.layers = {layer("dense", 81), layer("relu"), layer("dense", 784), layer("sigmoid")};
  s.loss = ad::LossKind::mse;
  s.batch_size = 500;
  s.epochs = 100;
  return s;
}

ad::Model dae_encoder(const ad::Model& dae) {
  return ad::truncate(dae, ad::last_node_of_layer(dae.graph, "L2"));
}

ad::Model compression_encoder(const ad::Model& ae) {
  return ad::truncate(ae, ad::last_node_of_layer(ae.graph, "L0"));
}

// ------------------------------------------------------------ DAE data set

DaeTrainingSet make_dae_training_set(const Dataset& clean,
                                     const std::vector<AttackGenerator>& generators,
                                     double mix_ratio, std::uint64_t seed) {
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw PreconditionError("mix ratio must lie in [0,1]");
  if (generators.empty() && mix_ratio > 0.0)
    throw PreconditionError("mix ratio > 0 requires at least one attack generator");
  const std::size_t n = clean.size();
  DaeTrainingSet out;
  out.data.inputs = clean.inputs;
  out.data.targets = clean.inputs;
  out.data.labels = clean.labels;
  out.generator.assign(n, -1);
  std::vector<std::vector<std::size_t>> assigned(generators.size());
  std::size_t dealt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (unit_interval(derive_seed(seed, {i})) < mix_ratio) {
      const std::size_t g = dealt++ % generators.size();
      out.generator[i] = static_cast<int>(g);
      assigned[g].push_back(i);
    }
  }
  for (std::size_t g = 0; g < generators.size(); ++g) {
    if (assigned[g].empty()) continue;
    const Tensor x = stack_rows(clean.inputs, assigned[g]);
    std::vector<std::size_t> y;
    for (auto i : assigned[g]) y.push_back(clean.labels[i]);
    const Tensor adv = generators[g].run(x, y);
    if (adv.shape() != x.shape())
      throw ShapeError("attack generator '" + generators[g].name + "' changed the batch shape");
    for (std::size_t k = 0; k < assigned[g].size(); ++k) {
      const auto src = adv.row(k);
      std::copy(src.begin(), src.end(), out.data.inputs.row(assigned[g][k]).begin());
    }
  }
  return out;
}

// ------------------------------------------------------ reduced classifiers

Tensor compress(const ad::Model& compressor, const Tensor& inputs) {
  return predict(compressor, inputs);
}

namespace {

Shape image_shape_of(const Shape& s) {
  if (s.size() == 3) return s;
  if (s.size() == 1) {
    const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(s[0]))));
    if (r * r == s[0]) return {1, r, r};
  }
  return {};
}

ad::Model upsample_model(const ad::Model& source, const Shape& reduced, bool adapter) {
  const Shape& full = source.graph.input_shape();
  const Shape img = image_shape_of(full);
  if (img.empty() || img[1] % 2 || img[2] % 2 || numel(reduced) != img[0] * (img[1] / 2) * (img[2] / 2))
    throw ShapeError("reduced input " + to_string(reduced) +
                     " cannot be upsampled 2x2 to classifier input " + to_string(full));
  const Shape half{img[0], img[1] / 2, img[2] / 2};
  ad::Model m{ad::Graph(reduced), {}};
  ad::OpAttrs a;
  if (adapter) {
    a.target = {numel(reduced)};
    if (reduced != a.target) m.graph.add(ad::OpKind::reshape, a, {}, "up/flatten");
    ad::OpAttrs d;
    d.units = numel(reduced);
    m.graph.add(ad::OpKind::dense, d, {"adapter.W", "adapter.b"}, "up/adapter");
    // Identity start: the adapter initially passes the code through unchanged.
    Tensor w({d.units, d.units}, 0.0);
    for (std::size_t i = 0; i < d.units; ++i) w[i * d.units + i] = 1.0;
    m.params.add("adapter.W", std::move(w));
    m.params.add("adapter.b", Tensor({d.units}, 0.0));
  }
  if (m.graph.output_shape() != half) {
    a.target = half;
    m.graph.add(ad::OpKind::reshape, a, {}, "up/reshape");
  }
  m.graph.add(ad::OpKind::upsample2, {}, {}, "up/upsample2");
  if (full != img) {
    a.target = full;
    m.graph.add(ad::OpKind::reshape, a, {}, "up/unflatten");
  }
  const int offset = m.graph.output();
  for (std::size_t id = 1; id < source.graph.size(); ++id) {
    const auto& n = source.graph.nodes()[id];
    std::vector<int> inputs;
    for (int in : n.inputs) inputs.push_back(in == 0 ? offset : in + offset);
    m.graph.add(n.kind, std::move(inputs), n.attrs, n.params, n.label);
    const bool first_layer = n.label.rfind("L0/", 0) == 0;
    for (const auto& p : n.params)
      if (!m.params.contains(p)) m.params.add(p, source.params.at(p).value, first_layer && !adapter);
  }
  return m;
}

}  // namespace

TrainedModel derive_reduced_classifier(const ReducedClassifierRecipe& recipe,
                                       const Dataset& dataset, std::uint64_t seed,
                                       const TrainData* test) {
  if (!recipe.compressor) throw PreconditionError("reduced classifier needs a compressor");
  const Shape& bottleneck = recipe.compressor->graph.output_shape();
  if (bottleneck != recipe.reduced_input_shape)
    throw ShapeError("compressor bottleneck " + to_string(bottleneck) +
                     " does not match reduced input " + to_string(recipe.reduced_input_shape));
  const TrainData data{compress(*recipe.compressor, dataset.inputs), dataset.labels, {}};
  std::optional<TrainData> test_data;
  if (test) test_data = TrainData{compress(*recipe.compressor, test->inputs), test->labels, {}};
  TrainOptions opts;
  if (test_data) opts.test = &*test_data;

  ModelSpec spec = recipe.source ? recipe.source->spec : mnist_classifier_spec();
  spec.input_shape = recipe.reduced_input_shape;
  if (recipe.epochs) spec.epochs = *recipe.epochs;

  if (recipe.method == ReductionMethod::retrain) {
    spec.name += "-reduced";
    TrainedModel t = train(spec, data, seed, opts);
    t.provenance.note = "retrain";
    return t;
  }
  if (!recipe.source) throw PreconditionError("upsample method needs a trained source classifier");
  spec.name += recipe.adapter ? "-upsample-adapter" : "-upsample";
  TrainedModel t{spec, upsample_model(recipe.source->model, recipe.reduced_input_shape,
                                      recipe.adapter),
                 {}};
  t.provenance.spec_hash = spec.hash();
  t.provenance.note = recipe.adapter ? "upsample+adapter" : "upsample";
  fit(t.model, spec, data, seed, t.provenance, opts);
  return t;
}

// ---------------------------------------------------------- serialisation

json graph_to_json(const ad::Graph& graph) {
  json nodes = json::array();
  for (std::size_t id = 1; id < graph.size(); ++id) {
    const auto& n = graph.nodes()[id];
    nodes.push_back({{"op", std::string(ad::op_name(n.kind))},
                     {"inputs", n.inputs},
                     {"params", n.params},
                     {"label", n.label},
                     {"units", n.attrs.units},
                     {"filters", n.attrs.filters},
                     {"kernel", n.attrs.kernel},
                     {"same_padding", n.attrs.same_padding},
                     {"rate", n.attrs.rate},
                     {"epsilon", n.attrs.epsilon},
                     {"target", n.attrs.target}});
  }
  return {{"input_shape", graph.input_shape()}, {"nodes", nodes}};
}

ad::Graph graph_from_json(const json& j) {
  ad::Graph g(j.at("input_shape").get<Shape>());
  for (const auto& n : j.at("nodes")) {
    ad::OpAttrs a;
    a.units = n.at("units").get<std::size_t>();
    a.filters = n.at("filters").get<std::size_t>();
    a.kernel = n.at("kernel").get<std::size_t>();
    a.same_padding = n.at("same_padding").get<bool>();
    a.rate = n.at("rate").get<double>();
    a.epsilon = n.at("epsilon").get<double>();
    a.target = n.at("target").get<Shape>();
    g.add(ad::op_from_name(n.at("op").get<std::string>()), n.at("inputs").get<std::vector<int>>(), a,
          n.at("params").get<std::vector<std::string>>(), n.at("label").get<std::string>());
  }
  return g;
}

void save(const TrainedModel& model, const std::filesystem::path& path) {
  json params = json::array();
  std::vector<const Tensor*> blobs;
  for (const auto& name : model.model.params.names()) {
    const auto& p = model.model.params.at(name);
    params.push_back({{"name", name}, {"trainable", p.trainable}});
    blobs.push_back(&p.value);
  }
  json header = {{"section", "MODEL"},
                 {"spec", model.spec.to_json()},
                 {"provenance", provenance_to_json(model.provenance)},
                 {"graph", graph_to_json(model.model.graph)},
                 {"params", params}};
  container::write_file(path, container::encode(std::move(header), blobs));
}

TrainedModel load(const std::filesystem::path& path) {
  auto c = container::decode(container::read_file(path));
  try {
    if (c.header.at("section") != "MODEL")
      throw FormatError("wrong_section", path.string() + " is not a model checkpoint");
    TrainedModel t;
    t.spec = ModelSpec::from_json(c.header.at("spec"));
    t.provenance = provenance_from_json(c.header.at("provenance"));
    if (t.provenance.spec_hash != t.spec.hash())
      throw FormatError("spec_hash_mismatch", "provenance hash does not match stored spec");
    t.model.graph = graph_from_json(c.header.at("graph"));
    const auto& params = c.header.at("params");
    if (params.size() != c.blobs.size()) throw FormatError("malformed", "parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      t.model.params.add(params[i].at("name").get<std::string>(), std::move(c.blobs[i]),
                         params[i].at("trainable").get<bool>());
    t.model.graph.validate(t.model.params);
    return t;
  } catch (const json::exception& e) {
    throw FormatError("malformed", std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace abf::zoo
