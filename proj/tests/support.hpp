#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <cmath>
#include <random>

#include "abf/autodiff.hpp"

namespace abf::testing {

struct RandomCase {
  ad::Model model;
  Tensor input;
  ad::LossSpec loss;
  std::string description;
};

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& gen, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (auto& v : t.storage()) v = d(gen);
  return t;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 gen(seed);
  return random_tensor(shape, gen, lo, hi);
}

// True when every ReLU/ELU preactivation is at least `margin` from 0 and
// every pooling window has a unique maximum by at least `margin`.
inline bool away_from_kinks(const ad::Graph& g, const ad::Trace& t, double margin) {
  for (int id = 1; id < static_cast<int>(g.size()); ++id) {
    const auto& n = g.node(id);
    const Tensor& x = t.values[static_cast<std::size_t>(n.inputs[0])];
    if (n.kind == ad::OpKind::relu || n.kind == ad::OpKind::elu) {
      for (double v : x.storage())
        if (std::abs(v) < margin) return false;
    } else if (n.kind == ad::OpKind::max_pool2) {
      const auto& in = g.node(n.inputs[0]).shape;
      const std::size_t h = in[1], w = in[2];
      for (std::size_t r = 0; r < t.batch * in[0]; ++r)
        for (std::size_t oy = 0; oy < h / 2; ++oy)
          for (std::size_t ox = 0; ox < w / 2; ++ox) {
            const double* p = x.raw() + r * h * w + 2 * oy * w + 2 * ox;
            double v[4] = {p[0], p[1], p[w], p[w + 1]};
            std::sort(v, v + 4);
            if (v[3] - v[2] < margin) return false;
          }
    }
  }
  return true;
}

// Random small graph over the supported op-kinds with a matching loss.
// Retries until the sample sits away from every kink.
inline RandomCase random_case(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 gen(seed * 1000003 + attempt);
    auto pick = [&gen](int n) { return static_cast<int>(gen() % static_cast<std::uint64_t>(n)); };
    auto activation = [&](ad::ModelBuilder& b, std::string& desc) {
      switch (pick(3)) {
        case 0: b.relu(); desc += " relu"; break;
        case 1: b.elu(); desc += " elu"; break;
        default: b.sigmoid(); desc += " sigmoid"; break;
      }
    };
    std::string desc;
    const bool spatial = pick(2) == 0;
    Shape input_shape = spatial ? Shape{1 + static_cast<std::size_t>(pick(2)), 4, 4}
                                : Shape{2 + static_cast<std::size_t>(pick(5))};
    ad::ModelBuilder b(input_shape, gen());
    if (spatial) {
      b.conv2d(2 + static_cast<std::size_t>(pick(2)), 3, pick(4) != 0);
      desc += "conv2d";
      if (pick(2)) { b.batch_norm(); desc += " bn"; }
      activation(b, desc);
      if (b.current_shape()[1] >= 2 && pick(2)) { b.max_pool2(); desc += " pool"; }
      if (pick(3) == 0) { b.upsample2(); desc += " upsample"; }
      if (pick(2)) { b.conv2d(2, 3, true); desc += " conv2d"; activation(b, desc); }
      b.flatten();
      desc += " flatten";
    }
    b.dense(3 + static_cast<std::size_t>(pick(4)));
    desc += " dense";
    if (!spatial && pick(2)) { b.batch_norm(); desc += " bn"; }
    activation(b, desc);
    if (pick(2)) { b.dropout(0.3); desc += " dropout"; }
    const std::size_t out = 2 + static_cast<std::size_t>(pick(3));
    b.dense(out);
    desc += " dense";
    const bool ce = pick(2) == 0;
    if (ce && pick(2)) { b.softmax(); desc += " softmax"; }
    if (!ce && pick(2)) { b.sigmoid(); desc += " sigmoid"; }
    ad::Model m = std::move(b).build();
    // Non-trivial batch-norm statistics.
    for (const auto& name : m.params.names()) {
      auto& p = m.params.at(name);
      if (name.ends_with(".var")) p.value = random_tensor(p.value.shape(), gen, 0.5, 2.0);
      if (name.ends_with(".mean") || name.ends_with(".beta"))
        p.value = random_tensor(p.value.shape(), gen, -0.3, 0.3);
      if (name.ends_with(".gamma")) p.value = random_tensor(p.value.shape(), gen, 0.5, 1.5);
      if (name.ends_with(".b")) p.value = random_tensor(p.value.shape(), gen, -0.2, 0.2);
    }
    const std::size_t batch = 1 + static_cast<std::size_t>(pick(3));
    Tensor x = random_tensor(with_batch(input_shape, batch).shape(), gen, -1.0, 1.0);
    ad::LossSpec loss;
    if (ce) {
      std::vector<std::size_t> labels;
      for (std::size_t i = 0; i < batch; ++i) labels.push_back(static_cast<std::size_t>(pick(static_cast<int>(out))));
      loss = ad::LossSpec::cross_entropy(labels);
      desc += " | ce";
    } else {
      loss = ad::LossSpec::mse(random_tensor({batch, out}, gen, 0.0, 1.0));
      desc += " | mse";
    }
    const auto trace = ad::forward_trace(m.graph, m.params, x);
    if (!away_from_kinks(m.graph, trace, 1e-2)) continue;
    return {std::move(m), std::move(x), std::move(loss), desc};
  }
}

}  // namespace abf::testing
