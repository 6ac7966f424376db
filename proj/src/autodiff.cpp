#include "abf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "abf/error.hpp"
#include "abf/kernels.hpp"
#include "abf/rng.hpp"

namespace abf::ad {

namespace {

kernels::ConvGeometry conv_geometry(const Node& n, const Shape& in) {
  kernels::ConvGeometry g;
  g.channels = in[0];
  g.height = in[1];
  g.width = in[2];
  g.filters = n.attrs.filters;
  g.kernel = n.attrs.kernel;
  g.same_padding = n.attrs.same_padding;
  return g;
}

// Channel count and per-channel spatial extent for batch norm.
std::pair<std::size_t, std::size_t> bn_layout(const Shape& in) {
  return {in[0], in.size() == 3 ? in[1] * in[2] : 1};
}

bool dropout_keep(std::uint64_t seed, int node, std::size_t element, double rate) {
  return unit_interval(derive_seed(seed, {static_cast<std::uint64_t>(node), element})) >= rate;
}

const double* param_ptr(const ParameterStore& params, const Node& n, std::size_t i) {
  return params.at(n.params[i]).value.raw();
}

Tensor eval_node(const Graph& graph, const ParameterStore& params, int id, const Tensor& x,
                 const ForwardOptions& opt) {
  const Node& n = graph.node(id);
  const Shape& in = graph.node(n.inputs[0]).shape;
  const std::size_t batch = x.batch();
  Tensor y = with_batch(n.shape, batch);
  const double* xs = x.raw();
  double* ys = y.raw();
  const std::size_t count = x.size();
  switch (n.kind) {
    case OpKind::dense:
      kernels::dense_forward(xs, param_ptr(params, n, 0), param_ptr(params, n, 1), ys, batch,
                             in[0], n.attrs.units);
      break;
    case OpKind::conv2d:
      kernels::conv2d_forward(xs, param_ptr(params, n, 0), param_ptr(params, n, 1), ys, batch,
                              conv_geometry(n, in));
      break;
    case OpKind::max_pool2: {
      const std::size_t c = in[0], h = in[1], w = in[2], oh = h / 2, ow = w / 2;
      for (std::size_t r = 0; r < batch * c; ++r) {
        const double* xp = xs + r * h * w;
        double* yp = ys + r * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* p = xp + 2 * oy * w + 2 * ox;
            yp[oy * ow + ox] = std::max(std::max(p[0], p[1]), std::max(p[w], p[w + 1]));
          }
      }
      break;
    }
    case OpKind::upsample2: {
      const std::size_t c = in[0], h = in[1], w = in[2];
      for (std::size_t r = 0; r < batch * c; ++r)
        for (std::size_t oy = 0; oy < 2 * h; ++oy)
          for (std::size_t ox = 0; ox < 2 * w; ++ox)
            ys[(r * 2 * h + oy) * 2 * w + ox] = xs[(r * h + oy / 2) * w + ox / 2];
      break;
    }
    case OpKind::relu:
      for (std::size_t i = 0; i < count; ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
      break;
    case OpKind::elu:
      for (std::size_t i = 0; i < count; ++i) ys[i] = xs[i] > 0.0 ? xs[i] : std::expm1(xs[i]);
      break;
    case OpKind::sigmoid:
      for (std::size_t i = 0; i < count; ++i)
        ys[i] = xs[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xs[i]))
                             : std::exp(xs[i]) / (1.0 + std::exp(xs[i]));
      break;
    case OpKind::softmax:
    case OpKind::argmax: {
      const std::size_t k = in[0];
      for (std::size_t r = 0; r < batch; ++r) {
        const double* z = xs + r * k;
        double* p = ys + r * k;
        const std::size_t best =
            static_cast<std::size_t>(std::max_element(z, z + k) - z);  // first maximum
        if (n.kind == OpKind::argmax) {
          p[best] = 1.0;
          continue;
        }
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += (p[i] = std::exp(z[i] - z[best]));
        for (std::size_t i = 0; i < k; ++i) p[i] /= s;
      }
      break;
    }
    case OpKind::batch_norm: {
      const auto [c, spatial] = bn_layout(in);
      const double *gamma = param_ptr(params, n, 0), *beta = param_ptr(params, n, 1),
                   *mean = param_ptr(params, n, 2), *var = param_ptr(params, n, 3);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t ch = (i / spatial) % c;
        ys[i] = gamma[ch] * (xs[i] - mean[ch]) / std::sqrt(var[ch] + n.attrs.epsilon) + beta[ch];
      }
      break;
    }
    case OpKind::dropout:
      if (!opt.training || n.attrs.rate == 0.0) {
        std::copy(xs, xs + count, ys);
      } else {
        const double scale = 1.0 / (1.0 - n.attrs.rate);
        for (std::size_t i = 0; i < count; ++i)
          ys[i] = dropout_keep(opt.dropout_seed, id, i, n.attrs.rate) ? xs[i] * scale : 0.0;
      }
      break;
    case OpKind::reshape:
      std::copy(xs, xs + count, ys);
      break;
    case OpKind::input:
      break;
  }
  return y;
}

}  // namespace

Tensor as_batch(const Graph& graph, const Tensor& input) {
  const Shape& sample = graph.input_shape();
  if (input.shape() == sample) return input.reshaped(with_batch(sample, 1).shape());
  if (input.rank() == sample.size() + 1 && input.sample_shape() == sample) return input;
  throw ShapeError("node 0 (input): expected " + to_string(sample) + " or [N," +
                       to_string(sample).substr(1) + ", got " + to_string(input.shape()),
                   0);
}

Trace forward_trace(const Graph& graph, const ParameterStore& params, const Tensor& input,
                    const ForwardOptions& options) {
  graph.validate(params);
  Trace t;
  t.options = options;
  t.values.reserve(graph.size());
  t.values.push_back(as_batch(graph, input));
  t.batch = t.values[0].batch();
  for (int id = 1; id < static_cast<int>(graph.size()); ++id) {
    const Node& n = graph.node(id);
    t.values.push_back(eval_node(graph, params, id, t.values[static_cast<std::size_t>(n.inputs[0])],
                                 options));
  }
  return t;
}

Tensor forward(const Graph& graph, const ParameterStore& params, const Tensor& input,
               const ForwardOptions& options) {
  return forward_trace(graph, params, input, options).values.back();
}

Gradients backward(const Graph& graph, const ParameterStore& params, const Trace& trace, int from,
                   const Tensor& grad, bool want_params) {
  if (from < 0 || from > graph.output()) throw PreconditionError("backward: bad seed node");
  if (grad.shape() != trace.values[static_cast<std::size_t>(from)].shape())
    throw ShapeError("backward: seed gradient shape " + to_string(grad.shape()) +
                         " does not match node value " +
                         to_string(trace.values[static_cast<std::size_t>(from)].shape()),
                     from);
  for (int id = 1; id <= from; ++id)
    if (graph.node(id).kind == OpKind::argmax)
      throw NonDifferentiableError("node " + std::to_string(id) + " (argmax) has no gradient");

  const std::size_t batch = trace.batch;
  Gradients out;
  if (want_params) {
    for (int id = 1; id <= from; ++id)
      for (const auto& p : graph.node(id).params)
        if (!out.params.contains(p))
          out.params.add(p, Tensor(params.at(p).value.shape(), 0.0), params.at(p).trainable);
  }

  std::vector<Tensor> g(graph.size());
  g[static_cast<std::size_t>(from)] = grad;
  for (int id = from; id >= 1; --id) {
    Tensor& dy_t = g[static_cast<std::size_t>(id)];
    if (dy_t.empty()) continue;
    const Node& n = graph.node(id);
    const int src = n.inputs[0];
    const Tensor& x_t = trace.values[static_cast<std::size_t>(src)];
    const Tensor& y_t = trace.values[static_cast<std::size_t>(id)];
    const Shape& in = graph.node(src).shape;
    Tensor dx_t(x_t.shape(), 0.0);
    const double* dy = dy_t.raw();
    const double* x = x_t.raw();
    const double* y = y_t.raw();
    double* dx = dx_t.raw();
    const std::size_t count = x_t.size();

    switch (n.kind) {
      case OpKind::dense: {
        const double* w = param_ptr(params, n, 0);
        kernels::dense_backward_input(dy, w, dx, batch, in[0], n.attrs.units);
        if (want_params)
          kernels::dense_backward_params(x, dy, out.params.at(n.params[0]).value.raw(),
                                         out.params.at(n.params[1]).value.raw(), batch, in[0],
                                         n.attrs.units);
        break;
      }
      case OpKind::conv2d: {
        const auto geo = conv_geometry(n, in);
        kernels::conv2d_backward_input(dy, param_ptr(params, n, 0), dx, batch, geo);
        if (want_params)
          kernels::conv2d_backward_params(x, dy, out.params.at(n.params[0]).value.raw(),
                                          out.params.at(n.params[1]).value.raw(), batch, geo);
        break;
      }
      case OpKind::max_pool2: {
        // Gradient goes to the first maximal entry of each window (row-major).
        const std::size_t c = in[0], h = in[1], w = in[2], oh = h / 2, ow = w / 2;
        for (std::size_t r = 0; r < batch * c; ++r) {
          const double* xp = x + r * h * w;
          double* dxp = dx + r * h * w;
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::size_t base = 2 * oy * w + 2 * ox;
              const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
              std::size_t best = cand[0];
              for (auto ci : cand)
                if (xp[ci] > xp[best]) best = ci;
              dxp[best] += dy[r * oh * ow + oy * ow + ox];
            }
        }
        break;
      }
      case OpKind::upsample2: {
        const std::size_t c = in[0], h = in[1], w = in[2];
        for (std::size_t r = 0; r < batch * c; ++r)
          for (std::size_t oy = 0; oy < 2 * h; ++oy)
            for (std::size_t ox = 0; ox < 2 * w; ++ox)
              dx[(r * h + oy / 2) * w + ox / 2] += dy[(r * 2 * h + oy) * 2 * w + ox];
        break;
      }
      case OpKind::relu:
        for (std::size_t i = 0; i < count; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        break;
      case OpKind::elu:
        for (std::size_t i = 0; i < count; ++i) dx[i] = x[i] > 0.0 ? dy[i] : dy[i] * (y[i] + 1.0);
        break;
      case OpKind::sigmoid:
        for (std::size_t i = 0; i < count; ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
        break;
      case OpKind::softmax: {
        const std::size_t k = in[0];
        for (std::size_t r = 0; r < batch; ++r) {
          double s = 0.0;
          for (std::size_t i = 0; i < k; ++i) s += dy[r * k + i] * y[r * k + i];
          for (std::size_t i = 0; i < k; ++i) dx[r * k + i] = y[r * k + i] * (dy[r * k + i] - s);
        }
        break;
      }
      case OpKind::batch_norm: {
        const auto [c, spatial] = bn_layout(in);
        const double *gamma = param_ptr(params, n, 0), *mean = param_ptr(params, n, 2),
                     *var = param_ptr(params, n, 3);
        const double eps = n.attrs.epsilon;
        double *dg = nullptr, *db = nullptr, *dm = nullptr, *dv = nullptr;
        if (want_params) {
          dg = out.params.at(n.params[0]).value.raw();
          db = out.params.at(n.params[1]).value.raw();
          dm = out.params.at(n.params[2]).value.raw();
          dv = out.params.at(n.params[3]).value.raw();
        }
        for (std::size_t i = 0; i < count; ++i) {
          const std::size_t ch = (i / spatial) % c;
          const double inv = 1.0 / std::sqrt(var[ch] + eps);
          dx[i] = dy[i] * gamma[ch] * inv;
          if (want_params) {
            const double centered = x[i] - mean[ch];
            dg[ch] += dy[i] * centered * inv;
            db[ch] += dy[i];
            dm[ch] -= dy[i] * gamma[ch] * inv;
            dv[ch] -= 0.5 * dy[i] * gamma[ch] * centered * inv * inv * inv;
          }
        }
        break;
      }
      case OpKind::dropout:
        if (!trace.options.training || n.attrs.rate == 0.0) {
          std::copy(dy, dy + count, dx);
        } else {
          const double scale = 1.0 / (1.0 - n.attrs.rate);
          for (std::size_t i = 0; i < count; ++i)
            dx[i] = dropout_keep(trace.options.dropout_seed, id, i, n.attrs.rate) ? dy[i] * scale
                                                                                 : 0.0;
        }
        break;
      case OpKind::reshape:
        std::copy(dy, dy + count, dx);
        break;
      case OpKind::argmax:
      case OpKind::input:
        break;
    }
    Tensor& acc = g[static_cast<std::size_t>(src)];
    if (acc.empty()) {
      acc = std::move(dx_t);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dx_t[i];
    }
    dy_t = Tensor();  // release early
  }
  out.input = g[0].empty() ? Tensor(trace.values[0].shape(), 0.0) : std::move(g[0]);
  return out;
}

Tensor vjp_input(const Graph& graph, const ParameterStore& params, const Tensor& input,
                 const Tensor& grad_output) {
  const Trace t = forward_trace(graph, params, input);
  return backward(graph, params, t, graph.output(), grad_output, false).input;
}

LossSpec LossSpec::cross_entropy(std::vector<std::size_t> labels, Reduction r) {
  LossSpec s;
  s.kind = LossKind::cross_entropy;
  s.labels = std::move(labels);
  s.reduction = r;
  return s;
}

LossSpec LossSpec::mse(Tensor target, Reduction r) {
  LossSpec s;
  s.kind = LossKind::mse;
  s.target = std::move(target);
  s.reduction = r;
  return s;
}

LossResult evaluate_loss(const Graph& graph, const Trace& trace, const LossSpec& loss) {
  const std::size_t batch = trace.batch;
  if (batch == 0) throw PreconditionError("loss over an empty batch");
  LossResult res;
  res.per_sample.assign(batch, 0.0);
  const double reduce = loss.reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;
  const double w = loss.scale * reduce;

  if (loss.kind == LossKind::cross_entropy) {
    int node = graph.output();
    if (graph.node(node).kind == OpKind::softmax) node = graph.node(node).inputs[0];
    const Tensor& z_t = trace.values[static_cast<std::size_t>(node)];
    if (graph.node(node).shape.size() != 1)
      throw ShapeError("cross-entropy needs rank-1 logits", node);
    if (loss.labels.size() != batch)
      throw ShapeError("cross-entropy: " + std::to_string(loss.labels.size()) + " labels for " +
                           std::to_string(batch) + " samples",
                       node);
    const std::size_t k = graph.node(node).shape[0];
    res.seed_node = node;
    res.seed_grad = Tensor(z_t.shape(), 0.0);
    for (std::size_t r = 0; r < batch; ++r) {
      const std::size_t label = loss.labels[r];
      if (label >= k) throw PreconditionError("label " + std::to_string(label) + " out of range");
      const double* z = z_t.raw() + r * k;
      const double m = *std::max_element(z, z + k);
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += std::exp(z[i] - m);
      const double lse = m + std::log(s);
      res.per_sample[r] = lse - z[label];
      double* gz = res.seed_grad.raw() + r * k;
      for (std::size_t i = 0; i < k; ++i)
        gz[i] = w * (std::exp(z[i] - lse) - (i == label ? 1.0 : 0.0));
    }
  } else {
    const int node = graph.output();
    const Tensor& y_t = trace.values[static_cast<std::size_t>(node)];
    const Tensor target = loss.target.shape() == graph.output_shape()
                              ? loss.target.reshaped(y_t.shape())
                              : loss.target;
    if (target.shape() != y_t.shape())
      throw ShapeError("mse target " + to_string(loss.target.shape()) + " vs output " +
                           to_string(y_t.shape()),
                       node);
    const std::size_t d = y_t.sample_size();
    res.seed_node = node;
    res.seed_grad = Tensor(y_t.shape(), 0.0);
    for (std::size_t r = 0; r < batch; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = y_t[r * d + i] - target[r * d + i];
        s += diff * diff;
        res.seed_grad[r * d + i] = w * 2.0 * diff / static_cast<double>(d);
      }
      res.per_sample[r] = s / static_cast<double>(d);
    }
  }
  double total = 0.0;
  for (double v : res.per_sample) total += v;
  res.value = w * total;
  return res;
}

double loss_value(const Graph& graph, const ParameterStore& params, const Tensor& input,
                  const LossSpec& loss, const ForwardOptions& options) {
  return evaluate_loss(graph, forward_trace(graph, params, input, options), loss).value;
}

Tensor grad_input(const Graph& graph, const ParameterStore& params, const Tensor& input,
                  const LossSpec& loss) {
  const Trace t = forward_trace(graph, params, input);
  const LossResult l = evaluate_loss(graph, t, loss);
  Tensor g = backward(graph, params, t, l.seed_node, l.seed_grad, false).input;
  return input.shape() == g.shape() ? g : g.reshaped(input.shape());
}

ParamGradResult grad_params(const Graph& graph, const ParameterStore& params, const Tensor& batch,
                            const LossSpec& loss, const ForwardOptions& options) {
  if (batch.empty())
    throw PreconditionError("grad_params: empty batch");
  const Trace t = forward_trace(graph, params, batch, options);
  const LossResult l = evaluate_loss(graph, t, loss);
  Gradients g = backward(graph, params, t, l.seed_node, l.seed_grad, true);
  ParamGradResult out;
  out.loss = l.value;
  // Full store layout, including parameters the loss never reaches.
  for (const auto& name : params.names()) {
    const auto& p = params.at(name);
    Tensor value = (p.trainable && g.params.contains(name)) ? std::move(g.params.at(name).value)
                                                             : Tensor(p.value.shape(), 0.0);
    out.grads.add(name, std::move(value), p.trainable);
  }
  return out;
}

namespace {

std::vector<std::size_t> probe_coords(std::size_t size, std::size_t limit) {
  std::vector<std::size_t> idx;
  if (limit == 0 || limit >= size) {
    for (std::size_t i = 0; i < size; ++i) idx.push_back(i);
    return idx;
  }
  for (std::size_t j = 0; j < limit; ++j) idx.push_back(j * size / limit);
  return idx;
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

FiniteDiffReport finite_diff_check(const Graph& graph, const ParameterStore& params,
                                   const Tensor& input, const LossSpec& loss,
                                   const FiniteDiffOptions& opt) {
  if (!(opt.step > 0.0)) throw PreconditionError("finite_diff_check: step must be positive");
  FiniteDiffReport rep;
  const double h = opt.step;

  if (opt.check_input) {
    const Tensor analytic = grad_input(graph, params, input, loss);
    Tensor probe = input;
    for (auto i : probe_coords(probe.size(), opt.max_coords_per_tensor)) {
      const double orig = probe[i];
      probe[i] = orig + h;
      const double up = loss_value(graph, params, probe, loss);
      probe[i] = orig - h;
      const double down = loss_value(graph, params, probe, loss);
      probe[i] = orig;
      const double e = rel_error(analytic[i], (up - down) / (2.0 * h), opt.floor);
      rep.input_max_rel_error = std::max(rep.input_max_rel_error, e);
      ++rep.coordinates_checked;
    }
  }
  if (opt.check_params) {
    const auto analytic = grad_params(graph, params, input, loss);
    ParameterStore probe = params;
    for (const auto& name : params.names()) {
      if (!params.at(name).trainable) continue;
      double worst = 0.0;
      Tensor& v = probe.at(name).value;
      for (auto i : probe_coords(v.size(), opt.max_coords_per_tensor)) {
        const double orig = v[i];
        v[i] = orig + h;
        const double up = loss_value(graph, probe, input, loss);
        v[i] = orig - h;
        const double down = loss_value(graph, probe, input, loss);
        v[i] = orig;
        worst = std::max(worst, rel_error(analytic.grads.at(name).value[i],
                                          (up - down) / (2.0 * h), opt.floor));
        ++rep.coordinates_checked;
      }
      rep.param_max_rel_error[name] = worst;
    }
  }
  rep.max_rel_error = rep.input_max_rel_error;
  for (auto& [_, e] : rep.param_max_rel_error) rep.max_rel_error = std::max(rep.max_rel_error, e);
  return rep;
}

}  // namespace abf::ad
