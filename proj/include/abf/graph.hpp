#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "abf/tensor.hpp"

namespace abf::ad {

enum class OpKind {
  input,
  dense,
  conv2d,
  max_pool2,
  upsample2,
  relu,
  elu,
  sigmoid,
  softmax,
  batch_norm,
  dropout,
  reshape,
  argmax,  // one-hot of the largest entry; forward only
};

std::string_view op_name(OpKind kind);
OpKind op_from_name(std::string_view name);

struct OpAttrs {
  std::size_t units = 0;    // dense
  std::size_t filters = 0;  // conv2d
  std::size_t kernel = 3;   // conv2d
  bool same_padding = true; // conv2d
  double rate = 0.0;        // dropout
  double epsilon = 1e-3;    // batch_norm
  Shape target;             // reshape
};

struct Node {
  OpKind kind = OpKind::input;
  std::vector<int> inputs;
  std::vector<std::string> params;
  Shape shape;  // per-sample output shape
  OpAttrs attrs;
  std::string label;
};

struct Parameter {
  Tensor value;
  bool trainable = true;
};

// Named parameter tensors in insertion order. Also used to carry gradients,
// which then share names, shapes and trainable flags with the model store.
class ParameterStore {
 public:
  void add(std::string name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.contains(name); }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t total_values() const;

  void set_trainable(const std::string& name, bool trainable) { at(name).trainable = trainable; }
  void freeze_all();

  // Zero tensors with the same names, shapes and flags.
  ParameterStore zeros_like() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Parameter> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Acyclic computation over per-sample shapes; node 0 is the input and the
// last node is the output. Nodes may only consume earlier nodes, so list
// order is a topological order.
class Graph {
 public:
  Graph() : Graph(Shape{1}) {}
  explicit Graph(Shape input_shape);

  // Appends a node consuming the current output node.
  int add(OpKind kind, OpAttrs attrs = {}, std::vector<std::string> params = {},
          std::string label = {});
  int add(OpKind kind, std::vector<int> inputs, OpAttrs attrs, std::vector<std::string> params,
          std::string label);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  int output() const { return static_cast<int>(nodes_.size()) - 1; }
  const Shape& input_shape() const { return nodes_.front().shape; }
  const Shape& output_shape() const { return nodes_.back().shape; }

  // Parameter shapes required by node `id`, aligned with node.params.
  std::vector<Shape> param_shapes(int id) const;
  // Every node's parameters exist in `params` with the required shapes.
  void validate(const ParameterStore& params) const;
  bool is_differentiable() const;

 private:
  Shape infer_shape(int id, OpKind kind, const std::vector<int>& inputs,
                    const OpAttrs& attrs) const;
  std::vector<Node> nodes_;
};

struct Model {
  Graph graph;
  ParameterStore params;
};

// Feeds `first`'s output into `second`. Parameter names gain the prefixes.
Model compose(const Model& first, const Model& second, const std::string& first_prefix,
              const std::string& second_prefix);
// Nodes [0, last_node] of `model` with only the parameters they use.
Model truncate(const Model& model, int last_node);
// Last node whose label starts with `layer_label` (e.g. "L2").
int last_node_of_layer(const Graph& graph, const std::string& layer_label);

// Fluent construction with Glorot-uniform weights and zero biases.
class ModelBuilder {
 public:
  ModelBuilder(Shape input_shape, std::uint64_t seed);

  ModelBuilder& dense(std::size_t units);
  ModelBuilder& conv2d(std::size_t filters, std::size_t kernel = 3, bool same_padding = true);
  ModelBuilder& max_pool2();
  ModelBuilder& upsample2();
  ModelBuilder& relu();
  ModelBuilder& elu();
  ModelBuilder& sigmoid();
  ModelBuilder& softmax();
  ModelBuilder& batch_norm();
  ModelBuilder& dropout(double rate);
  ModelBuilder& reshape(Shape target);
  ModelBuilder& flatten();
  ModelBuilder& argmax();

  // Labels the following nodes "L<index>" until the next call.
  ModelBuilder& layer(std::size_t index);
  const Shape& current_shape() const { return model_.graph.output_shape(); }
  Model build() && { return std::move(model_); }

 private:
  std::string label(std::string_view op) const;
  std::string param_name(std::string_view what) const;

  Model model_;
  std::uint64_t seed_;
  std::size_t layer_ = 0;
};

}  // namespace abf::ad
