#include "abf/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "abf/error.hpp"
#include "abf/rng.hpp"

namespace abf::ad {

namespace {

constexpr std::pair<OpKind, std::string_view> kOpNames[] = {
    {OpKind::input, "input"},           {OpKind::dense, "dense"},
    {OpKind::conv2d, "conv2d"},         {OpKind::max_pool2, "max_pool2"},
    {OpKind::upsample2, "upsample2"},   {OpKind::relu, "relu"},
    {OpKind::elu, "elu"},               {OpKind::sigmoid, "sigmoid"},
    {OpKind::softmax, "softmax"},       {OpKind::batch_norm, "batch_norm"},
    {OpKind::dropout, "dropout"},       {OpKind::reshape, "reshape"},
    {OpKind::argmax, "argmax"},
};

std::string node_ref(int id) { return "node " + std::to_string(id); }

}  // namespace

std::string_view op_name(OpKind kind) {
  for (auto& [k, n] : kOpNames)
    if (k == kind) return n;
  return "?";
}

OpKind op_from_name(std::string_view name) {
  for (auto& [k, n] : kOpNames)
    if (n == name) return k;
  throw FormatError("unknown_op", "unknown op kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- params

void ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw PreconditionError("duplicate parameter '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back({std::move(value), trainable});
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return values_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return values_[it->second];
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (auto& p : values_) n += p.value.size();
  return n;
}

void ParameterStore::freeze_all() {
  for (auto& p : values_) p.trainable = false;
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    out.add(names_[i], Tensor(values_[i].value.shape(), 0.0), values_[i].trainable);
  return out;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.values_.size(); ++i)
    if (a.values_[i].value != b.values_[i].value ||
        a.values_[i].trainable != b.values_[i].trainable)
      return false;
  return true;
}

// ----------------------------------------------------------------- graph

Graph::Graph(Shape input_shape) {
  for (auto d : input_shape)
    if (d == 0) throw ShapeError("input shape must be positive: " + to_string(input_shape), 0);
  if (input_shape.empty()) throw ShapeError("input shape must have rank >= 1", 0);
  nodes_.push_back(Node{OpKind::input, {}, {}, std::move(input_shape), {}, "input"});
}

int Graph::add(OpKind kind, OpAttrs attrs, std::vector<std::string> params, std::string label) {
  return add(kind, {output()}, std::move(attrs), std::move(params), std::move(label));
}

int Graph::add(OpKind kind, std::vector<int> inputs, OpAttrs attrs,
               std::vector<std::string> params, std::string label) {
  const int id = static_cast<int>(nodes_.size());
  if (kind == OpKind::input) throw ShapeError("only node 0 may be an input", id);
  if (inputs.size() != 1)
    throw ShapeError(node_ref(id) + ": op '" + std::string(op_name(kind)) + "' takes one input", id);
  for (int in : inputs)
    if (in < 0 || in >= id) throw ShapeError(node_ref(id) + ": input must be an earlier node", id);
  Shape shape = infer_shape(id, kind, inputs, attrs);
  nodes_.push_back(Node{kind, std::move(inputs), std::move(params), std::move(shape),
                        std::move(attrs), std::move(label)});
  const auto expected = param_shapes(id).size();
  if (nodes_.back().params.size() != expected) {
    nodes_.pop_back();
    throw ShapeError(node_ref(id) + ": op '" + std::string(op_name(kind)) + "' needs " +
                         std::to_string(expected) + " parameters",
                     id);
  }
  return id;
}

Shape Graph::infer_shape(int id, OpKind kind, const std::vector<int>& inputs,
                         const OpAttrs& attrs) const {
  const Shape& in = nodes_[static_cast<std::size_t>(inputs[0])].shape;
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError(node_ref(id) + " (" + std::string(op_name(kind)) + "): " + why +
                         ", input shape " + to_string(in),
                     id);
  };
  switch (kind) {
    case OpKind::dense:
      if (in.size() != 1) return fail("dense expects a rank-1 input");
      if (attrs.units == 0) return fail("dense needs units > 0");
      return {attrs.units};
    case OpKind::conv2d: {
      if (in.size() != 3) return fail("conv2d expects [C,H,W]");
      if (attrs.filters == 0 || attrs.kernel == 0 || attrs.kernel % 2 == 0)
        return fail("conv2d needs filters > 0 and an odd kernel");
      if (!attrs.same_padding && (in[1] < attrs.kernel || in[2] < attrs.kernel))
        return fail("valid conv2d kernel larger than input");
      const std::size_t h = attrs.same_padding ? in[1] : in[1] - attrs.kernel + 1;
      const std::size_t w = attrs.same_padding ? in[2] : in[2] - attrs.kernel + 1;
      return {attrs.filters, h, w};
    }
    case OpKind::max_pool2:
      if (in.size() != 3 || in[1] < 2 || in[2] < 2) return fail("max_pool2 expects [C,H>=2,W>=2]");
      return {in[0], in[1] / 2, in[2] / 2};
    case OpKind::upsample2:
      if (in.size() != 3) return fail("upsample2 expects [C,H,W]");
      return {in[0], in[1] * 2, in[2] * 2};
    case OpKind::softmax:
    case OpKind::argmax:
      if (in.size() != 1) return fail("expects a rank-1 input");
      return in;
    case OpKind::batch_norm:
      if (in.size() != 1 && in.size() != 3) return fail("batch_norm expects [F] or [C,H,W]");
      return in;
    case OpKind::dropout:
      if (attrs.rate < 0.0 || attrs.rate >= 1.0) return fail("dropout rate must lie in [0,1)");
      return in;
    case OpKind::reshape:
      if (attrs.target.empty() || numel(attrs.target) != numel(in))
        return fail("reshape target " + to_string(attrs.target) + " has a different size");
      return attrs.target;
    case OpKind::relu:
    case OpKind::elu:
    case OpKind::sigmoid:
      return in;
    case OpKind::input:
      break;
  }
  return fail("unsupported op");
}

std::vector<Shape> Graph::param_shapes(int id) const {
  const Node& n = node(id);
  const Shape& in = node(n.inputs.empty() ? 0 : n.inputs[0]).shape;
  switch (n.kind) {
    case OpKind::dense:
      return {{in[0], n.attrs.units}, {n.attrs.units}};
    case OpKind::conv2d:
      return {{n.attrs.filters, in[0], n.attrs.kernel, n.attrs.kernel}, {n.attrs.filters}};
    case OpKind::batch_norm: {
      const std::size_t c = in[0];
      return {{c}, {c}, {c}, {c}};  // gamma, beta, moving mean, moving variance
    }
    default:
      return {};
  }
}

void Graph::validate(const ParameterStore& params) const {
  for (std::size_t id = 1; id < nodes_.size(); ++id) {
    const auto shapes = param_shapes(static_cast<int>(id));
    const Node& n = nodes_[id];
    for (std::size_t p = 0; p < n.params.size(); ++p) {
      if (!params.contains(n.params[p]))
        throw ShapeError(node_ref(static_cast<int>(id)) + ": missing parameter '" + n.params[p] + "'",
                         static_cast<int>(id));
      const auto& actual = params.at(n.params[p]).value.shape();
      if (actual != shapes[p])
        throw ShapeError(node_ref(static_cast<int>(id)) + ": parameter '" + n.params[p] +
                             "' has shape " + to_string(actual) + ", expected " +
                             to_string(shapes[p]),
                         static_cast<int>(id));
    }
  }
}

bool Graph::is_differentiable() const {
  return std::none_of(nodes_.begin(), nodes_.end(),
                      [](const Node& n) { return n.kind == OpKind::argmax; });
}

// ------------------------------------------------------------ composition

Model compose(const Model& first, const Model& second, const std::string& first_prefix,
              const std::string& second_prefix) {
  if (first.graph.output_shape() != second.graph.input_shape())
    throw ShapeError("cannot feed output " + to_string(first.graph.output_shape()) +
                         " into input " + to_string(second.graph.input_shape()),
                     static_cast<int>(first.graph.size()));
  Model out{Graph(first.graph.input_shape()), {}};
  auto copy_params = [&out](const Model& m, const std::string& prefix) {
    for (const auto& name : m.params.names()) {
      const auto& p = m.params.at(name);
      out.params.add(prefix + name, p.value, p.trainable);
    }
  };
  copy_params(first, first_prefix);
  copy_params(second, second_prefix);

  auto append = [&out](const Model& m, const std::string& prefix, int offset) {
    for (std::size_t id = 1; id < m.graph.size(); ++id) {
      const Node& n = m.graph.nodes()[id];
      std::vector<int> inputs;
      for (int in : n.inputs) inputs.push_back(in == 0 ? offset : in + offset);
      std::vector<std::string> params;
      for (const auto& p : n.params) params.push_back(prefix + p);
      out.graph.add(n.kind, std::move(inputs), n.attrs, std::move(params), prefix + n.label);
    }
  };
  append(first, first_prefix, 0);
  append(second, second_prefix, first.graph.output());
  return out;
}

Model truncate(const Model& model, int last_node) {
  if (last_node < 0 || last_node > model.graph.output())
    throw PreconditionError("truncate: node " + std::to_string(last_node) + " out of range");
  Model out{Graph(model.graph.input_shape()), {}};
  for (int id = 1; id <= last_node; ++id) {
    const Node& n = model.graph.node(id);
    for (const auto& p : n.params) {
      const auto& param = model.params.at(p);
      if (!out.params.contains(p)) out.params.add(p, param.value, param.trainable);
    }
    out.graph.add(n.kind, n.inputs, n.attrs, n.params, n.label);
  }
  return out;
}

int last_node_of_layer(const Graph& graph, const std::string& layer_label) {
  int found = -1;
  const std::string key = layer_label + "/";
  for (std::size_t id = 0; id < graph.size(); ++id)
    if (graph.nodes()[id].label.rfind(key, 0) == 0) found = static_cast<int>(id);
  if (found < 0) throw PreconditionError("no nodes labelled '" + layer_label + "'");
  return found;
}

// ---------------------------------------------------------------- builder

ModelBuilder::ModelBuilder(Shape input_shape, std::uint64_t seed)
    : model_{Graph(std::move(input_shape)), {}}, seed_(seed) {}

std::string ModelBuilder::label(std::string_view op) const {
  return "L" + std::to_string(layer_) + "/" + std::string(op) +
         std::to_string(model_.graph.size());
}

std::string ModelBuilder::param_name(std::string_view what) const {
  return "L" + std::to_string(layer_) + "/n" + std::to_string(model_.graph.size()) + "." +
         std::string(what);
}

ModelBuilder& ModelBuilder::layer(std::size_t index) {
  layer_ = index;
  return *this;
}

namespace {

Tensor glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(shape);
  for (auto& v : t.storage()) v = dist(gen);
  return t;
}

}  // namespace

ModelBuilder& ModelBuilder::dense(std::size_t units) {
  const Shape in = current_shape();
  if (in.size() != 1) flatten();
  const std::size_t fan_in = current_shape()[0];
  const auto w = param_name("W"), b = param_name("b");
  const auto node_seed = derive_seed(seed_, {model_.graph.size()});
  OpAttrs a;
  a.units = units;
  model_.graph.add(OpKind::dense, a, {w, b}, label("dense"));
  model_.params.add(w, glorot({fan_in, units}, fan_in, units, node_seed));
  model_.params.add(b, Tensor({units}, 0.0));
  return *this;
}

ModelBuilder& ModelBuilder::conv2d(std::size_t filters, std::size_t kernel, bool same_padding) {
  const Shape in = current_shape();
  const auto w = param_name("W"), b = param_name("b");
  const auto node_seed = derive_seed(seed_, {model_.graph.size()});
  OpAttrs a;
  a.filters = filters;
  a.kernel = kernel;
  a.same_padding = same_padding;
  model_.graph.add(OpKind::conv2d, a, {w, b}, label("conv2d"));
  const std::size_t fan_in = in[0] * kernel * kernel, fan_out = filters * kernel * kernel;
  model_.params.add(w, glorot({filters, in[0], kernel, kernel}, fan_in, fan_out, node_seed));
  model_.params.add(b, Tensor({filters}, 0.0));
  return *this;
}

ModelBuilder& ModelBuilder::batch_norm() {
  const std::size_t c = current_shape()[0];
  const auto g = param_name("gamma"), be = param_name("beta"), m = param_name("mean"),
             v = param_name("var");
  model_.graph.add(OpKind::batch_norm, {}, {g, be, m, v}, label("batch_norm"));
  model_.params.add(g, Tensor({c}, 1.0));
  model_.params.add(be, Tensor({c}, 0.0));
  model_.params.add(m, Tensor({c}, 0.0), false);
  model_.params.add(v, Tensor({c}, 1.0), false);
  return *this;
}

#define ABF_SIMPLE_OP(fn, kind)                       \
  ModelBuilder& ModelBuilder::fn() {                  \
    model_.graph.add(kind, {}, {}, label(#fn));       \
    return *this;                                     \
  }
ABF_SIMPLE_OP(max_pool2, OpKind::max_pool2)
ABF_SIMPLE_OP(upsample2, OpKind::upsample2)
ABF_SIMPLE_OP(relu, OpKind::relu)
ABF_SIMPLE_OP(elu, OpKind::elu)
ABF_SIMPLE_OP(sigmoid, OpKind::sigmoid)
ABF_SIMPLE_OP(softmax, OpKind::softmax)
ABF_SIMPLE_OP(argmax, OpKind::argmax)
#undef ABF_SIMPLE_OP

ModelBuilder& ModelBuilder::dropout(double rate) {
  OpAttrs a;
  a.rate = rate;
  model_.graph.add(OpKind::dropout, a, {}, label("dropout"));
  return *this;
}

ModelBuilder& ModelBuilder::reshape(Shape target) {
  OpAttrs a;
  a.target = std::move(target);
  model_.graph.add(OpKind::reshape, a, {}, label("reshape"));
  return *this;
}

ModelBuilder& ModelBuilder::flatten() { return reshape({numel(current_shape())}); }

}  // namespace abf::ad
