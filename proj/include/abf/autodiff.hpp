#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "abf/graph.hpp"

namespace abf::ad {

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

// Every node's batched value from one forward pass.
struct Trace {
  std::vector<Tensor> values;
  ForwardOptions options;
  std::size_t batch = 0;
  const Tensor& output() const { return values.back(); }
};

// Accepts either a batch [N, sample...] or a single sample of exactly the
// graph's input shape (treated as N = 1). Anything else is a ShapeError at node 0.
Tensor as_batch(const Graph& graph, const Tensor& input);

Trace forward_trace(const Graph& graph, const ParameterStore& params, const Tensor& input,
                    const ForwardOptions& options = {});
Tensor forward(const Graph& graph, const ParameterStore& params, const Tensor& input,
               const ForwardOptions& options = {});
inline Tensor forward(const Model& m, const Tensor& input, const ForwardOptions& o = {}) {
  return forward(m.graph, m.params, input, o);
}

struct Gradients {
  Tensor input;           // batched like the traced input
  ParameterStore params;  // empty unless requested
};

// Reverse pass from node `from` seeded with `grad` (shape of that node's
// batched value). Gradients w.r.t. non-trainable parameters are computed
// too; callers that train zero them.
Gradients backward(const Graph& graph, const ParameterStore& params, const Trace& trace, int from,
                   const Tensor& grad, bool want_params);

// Vector-Jacobian product of the graph output.
Tensor vjp_input(const Graph& graph, const ParameterStore& params, const Tensor& input,
                 const Tensor& grad_output);

enum class LossKind { cross_entropy, mse };
enum class Reduction { mean, sum };

// Cross-entropy is taken on logits (a trailing softmax node is fused away);
// MSE is the mean over output coordinates of each sample. The batch is then
// averaged or summed, and the result multiplied by `scale`.
struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  std::vector<std::size_t> labels;
  Tensor target;
  double scale = 1.0;
  Reduction reduction = Reduction::mean;

  static LossSpec cross_entropy(std::vector<std::size_t> labels, Reduction r = Reduction::mean);
  static LossSpec mse(Tensor target, Reduction r = Reduction::mean);
};

struct LossResult {
  double value = 0.0;
  std::vector<double> per_sample;  // unscaled, unreduced
  int seed_node = 0;               // node the gradient below belongs to
  Tensor seed_grad;
};

LossResult evaluate_loss(const Graph& graph, const Trace& trace, const LossSpec& loss);
double loss_value(const Graph& graph, const ParameterStore& params, const Tensor& input,
                  const LossSpec& loss, const ForwardOptions& options = {});

Tensor grad_input(const Graph& graph, const ParameterStore& params, const Tensor& input,
                  const LossSpec& loss);

struct ParamGradResult {
  double loss = 0.0;
  ParameterStore grads;  // frozen entries are exactly zero
};
ParamGradResult grad_params(const Graph& graph, const ParameterStore& params, const Tensor& batch,
                            const LossSpec& loss, const ForwardOptions& options = {});

struct FiniteDiffReport {
  double input_max_rel_error = 0.0;
  std::map<std::string, double> param_max_rel_error;  // trainable parameters only
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
};

struct FiniteDiffOptions {
  double step = 1e-5;
  // |a - n| / max(|a|, |n|, floor); the floor keeps round-off on
  // vanishing gradients from reading as a large relative error.
  double floor = 1e-6;
  std::size_t max_coords_per_tensor = 0;  // 0 = all coordinates
  bool check_input = true;
  bool check_params = true;
};

FiniteDiffReport finite_diff_check(const Graph& graph, const ParameterStore& params,
                                   const Tensor& input, const LossSpec& loss,
                                   const FiniteDiffOptions& options = {});

}  // namespace abf::ad
