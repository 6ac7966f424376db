#include "abf/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "abf/container.hpp"
#include "abf/error.hpp"
#include "abf/rng.hpp"

namespace abf::attacks {

using nlohmann::json;

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::fgs: return "FGS";
    case Algorithm::pgd: return "PGD";
    case Algorithm::cw: return "CW";
    case Algorithm::deepfool: return "DF";
  }
  return "?";
}

Algorithm algorithm_from(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "FGS" || n == "FGSM") return Algorithm::fgs;
  if (n == "PGD") return Algorithm::pgd;
  if (n == "CW") return Algorithm::cw;
  if (n == "DF" || n == "DEEPFOOL") return Algorithm::deepfool;
  throw FormatError("bad_attack", "unknown attack algorithm '" + std::string(name) + "'");
}

void AttackSpec::validate() const {
  if (!(hi > lo)) throw PreconditionError("clip range must satisfy lo < hi");
  switch (algorithm) {
    case Algorithm::fgs:
      if (!(fgs_epsilon >= 0.0)) throw PreconditionError("FGS epsilon must be >= 0");
      break;
    case Algorithm::pgd:
      if (!(pgd_epsilon > 0.0 && pgd_step > 0.0)) throw PreconditionError("PGD norms must be > 0");
      if (pgd_step > pgd_epsilon) throw PreconditionError("PGD step must not exceed epsilon");
      if (pgd_iterations < 1) throw PreconditionError("PGD iterations must be >= 1");
      break;
    case Algorithm::cw:
      if (cw_binary_steps < 1 || cw_max_iterations < 1 || cw_restarts < 1 || cw_batch_size < 1)
        throw PreconditionError("CW counts must be >= 1");
      if (!(cw_learning_rate > 0.0 && cw_initial_const > 0.0))
        throw PreconditionError("CW learning rate and initial constant must be > 0");
      break;
    case Algorithm::deepfool:
      if (df_max_iterations < 1) throw PreconditionError("DF iterations must be >= 1");
      if (!(df_overshoot >= 0.0)) throw PreconditionError("DF overshoot must be >= 0");
      break;
  }
}

json AttackSpec::to_json() const {
  json j = {{"algorithm", algorithm_name(algorithm)}, {"lo", lo}, {"hi", hi}, {"seed", seed}};
  switch (algorithm) {
    case Algorithm::fgs:
      j.update({{"epsilon", fgs_epsilon}, {"sign", fgs_sign}, {"clip_aware", fgs_clip_aware}});
      break;
    case Algorithm::pgd:
      j.update({{"epsilon", pgd_epsilon}, {"step", pgd_step}, {"iterations", pgd_iterations},
                {"early_stop", pgd_early_stop}});
      break;
    case Algorithm::cw:
      j.update({{"binary_steps", cw_binary_steps}, {"max_iterations", cw_max_iterations},
                {"learning_rate", cw_learning_rate}, {"initial_const", cw_initial_const},
                {"abort_early", cw_abort_early}, {"abort_window", cw_abort_window},
                {"restarts", cw_restarts}, {"batch_size", cw_batch_size},
                {"confidence", cw_confidence}});
      break;
    case Algorithm::deepfool:
      j.update({{"max_iterations", df_max_iterations}, {"overshoot", df_overshoot},
                {"squared_norm_argmin", df_squared_norm_argmin}});
      break;
  }
  return j;
}

AttackSpec AttackSpec::from_json(const json& j) {
  AttackSpec s = defaults_for(algorithm_from(j.at("algorithm").get<std::string>()));
  s.lo = j.value("lo", s.lo);
  s.hi = j.value("hi", s.hi);
  s.seed = j.value("seed", s.seed);
  switch (s.algorithm) {
    case Algorithm::fgs:
      s.fgs_epsilon = j.value("epsilon", s.fgs_epsilon);
      s.fgs_sign = j.value("sign", s.fgs_sign);
      s.fgs_clip_aware = j.value("clip_aware", s.fgs_clip_aware);
      break;
    case Algorithm::pgd:
      s.pgd_epsilon = j.value("epsilon", s.pgd_epsilon);
      s.pgd_step = j.value("step", s.pgd_step);
      s.pgd_iterations = j.value("iterations", s.pgd_iterations);
      s.pgd_early_stop = j.value("early_stop", s.pgd_early_stop);
      break;
    case Algorithm::cw:
      s.cw_binary_steps = j.value("binary_steps", s.cw_binary_steps);
      s.cw_max_iterations = j.value("max_iterations", s.cw_max_iterations);
      s.cw_learning_rate = j.value("learning_rate", s.cw_learning_rate);
      s.cw_initial_const = j.value("initial_const", s.cw_initial_const);
      s.cw_abort_early = j.value("abort_early", s.cw_abort_early);
      s.cw_abort_window = j.value("abort_window", s.cw_abort_window);
      s.cw_restarts = j.value("restarts", s.cw_restarts);
      s.cw_batch_size = j.value("batch_size", s.cw_batch_size);
      s.cw_confidence = j.value("confidence", s.cw_confidence);
      break;
    case Algorithm::deepfool:
      s.df_max_iterations = j.value("max_iterations", s.df_max_iterations);
      s.df_overshoot = j.value("overshoot", s.df_overshoot);
      s.df_squared_norm_argmin = j.value("squared_norm_argmin", s.df_squared_norm_argmin);
      break;
  }
  return s;
}

AttackSpec AttackSpec::defaults_for(Algorithm a) {
  AttackSpec s;
  s.algorithm = a;
  return s;
}

// --------------------------------------------------------------- composite

CompositeVictim::CompositeVictim(std::vector<const VictimSystem*> systems)
    : systems_(std::move(systems)) {
  if (systems_.empty()) throw PreconditionError("composite victim needs at least one system");
  input_shape_ = systems_[0]->model.graph.input_shape();
  const Shape out = systems_[0]->model.graph.output_shape();
  if (out.size() != 1) throw ShapeError("victim system must output rank-1 logits");
  classes_ = out[0];
  for (const auto* s : systems_) {
    if (s->model.graph.input_shape() != input_shape_ || s->model.graph.output_shape() != out)
      throw ShapeError("victim system '" + s->name + "' does not share input shape " +
                       to_string(input_shape_) + " and " + std::to_string(classes_) + " classes");
    if (!s->model.graph.is_differentiable())
      throw NonDifferentiableError("victim system '" + s->name + "' is not differentiable");
  }
}

CompositeVictim::Evaluation CompositeVictim::evaluate(const Tensor& x) const {
  Evaluation e;
  for (const auto* s : systems_) {
    e.traces.push_back(ad::forward_trace(s->model.graph, s->model.params, x));
    const Tensor& z = e.traces.back().output();
    if (e.logits.empty()) {
      e.logits = z;
    } else {
      for (std::size_t i = 0; i < z.size(); ++i) e.logits[i] += z[i];
    }
  }
  if (systems_.size() > 1)
    for (auto& v : e.logits.storage()) v /= static_cast<double>(systems_.size());
  return e;
}

Tensor CompositeVictim::logits(const Tensor& x) const { return evaluate(x).logits; }

Tensor CompositeVictim::vjp(const Evaluation& e, const Tensor& weights) const {
  Tensor total;
  for (std::size_t k = 0; k < systems_.size(); ++k) {
    const auto& m = systems_[k]->model;
    Tensor g = ad::backward(m.graph, m.params, e.traces[k], m.graph.output(), weights, false).input;
    if (total.empty()) {
      total = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) total[i] += g[i];
    }
  }
  if (systems_.size() > 1)
    for (auto& v : total.storage()) v /= static_cast<double>(systems_.size());
  return total;
}

std::vector<Tensor> CompositeVictim::jacobian(const Evaluation& e) const {
  std::vector<Tensor> rows;
  const std::size_t n = e.logits.batch();
  for (std::size_t k = 0; k < classes_; ++k) {
    Tensor w({n, classes_}, 0.0);
    for (std::size_t r = 0; r < n; ++r) w[r * classes_ + k] = 1.0;
    rows.push_back(vjp(e, w));
  }
  return rows;
}

Tensor CompositeVictim::loss_gradient(const Tensor& x, std::span<const std::size_t> y) const {
  const auto loss = ad::LossSpec::cross_entropy({y.begin(), y.end()}, ad::Reduction::sum);
  Tensor total;
  for (const auto* s : systems_) {
    Tensor g = ad::grad_input(s->model.graph, s->model.params, x, loss);
    if (total.empty()) {
      total = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) total[i] += g[i];
    }
  }
  if (systems_.size() > 1)
    for (auto& v : total.storage()) v /= static_cast<double>(systems_.size());
  return total;
}

std::vector<std::vector<std::size_t>> CompositeVictim::per_system_predictions(const Tensor& x) const {
  std::vector<std::vector<std::size_t>> out;
  for (const auto* s : systems_) {
    const Tensor z = ad::forward(s->model, x);
    std::vector<std::size_t> p;
    for (std::size_t r = 0; r < z.batch(); ++r) {
      const auto row = z.row(r);
      p.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    out.push_back(std::move(p));
  }
  return out;
}

Tensor adaptive_gradient(const CompositeVictim& composite, const Tensor& x,
                         std::span<const std::size_t> y) {
  return composite.loss_gradient(x, y);
}

// ------------------------------------------------------------------ helpers

void project_l2(std::span<double> z, double epsilon) {
  const double n = l2_norm(z);
  const double scale = epsilon / std::max(epsilon, n);
  if (scale != 1.0)
    for (auto& v : z) v *= scale;
}

double cw_margin(std::span<const double> logits, std::size_t label, double confidence) {
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != label) other = std::max(other, logits[i]);
  return std::max(logits[label] - other + confidence, 0.0);
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::size_t> predictions(const Tensor& logits) {
  std::vector<std::size_t> p;
  for (std::size_t r = 0; r < logits.batch(); ++r) p.push_back(argmax(logits.row(r)));
  return p;
}

Tensor batch_of(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y) {
  Tensor b = ad::as_batch(ad::Graph(v.input_shape()), x);
  if (b.batch() != y.size())
    throw ShapeError("attack: " + std::to_string(y.size()) + " labels for " +
                     std::to_string(b.batch()) + " samples");
  for (auto label : y)
    if (label >= v.classes()) throw PreconditionError("attack: label out of range");
  return b;
}

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Largest s with ||clip(x + s d) - x|| <= eps; writes the clipped step into
// delta. Returns false when even s -> inf stays short of eps.
bool clip_aware_step(std::span<const double> x, std::span<const double> d, double eps,
                     double lo, double hi, std::span<double> delta) {
  struct Break {
    double t, room, d2;
  };
  std::vector<Break> br;
  double g = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (d[i] == 0.0) continue;
    const double room = d[i] > 0.0 ? hi - x[i] : x[i] - lo;
    br.push_back({room / std::abs(d[i]), room, d[i] * d[i]});
    g += d[i] * d[i];
  }
  std::sort(br.begin(), br.end(), [](const Break& a, const Break& b) { return a.t < b.t; });
  // ||clip(x + s d) - x||^2 = c + s^2 g on each segment between breakpoints.
  double c = 0.0, s = std::numeric_limits<double>::infinity();
  const double e2 = eps * eps;
  bool reachable = false;
  for (const auto& b : br) {
    if (c + b.t * b.t * g >= e2) {
      s = std::sqrt((e2 - c) / g);
      reachable = true;
      break;
    }
    c += b.room * b.room;
    g -= b.d2;
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    delta[i] = d[i] == 0.0 ? 0.0 : clamp(x[i] + s * d[i], lo, hi) - x[i];
  const double n = l2_norm(delta);
  if (n > eps) {
    const double shrink = std::nextafter(eps / n, 0.0);
    for (auto& v : delta) v *= shrink;
  }
  return reachable;
}

}  // namespace

// ---------------------------------------------------------------------- FGS

AttackOutput fgs(const CompositeVictim& v, const Tensor& x_in, std::span<const std::size_t> y,
                 const AttackSpec& spec) {
  spec.validate();
  const Tensor x = batch_of(v, x_in, y);
  AttackOutput out{x, std::vector<SampleResult>(x.batch())};
  if (spec.fgs_epsilon == 0.0) return out;
  const Tensor g = v.loss_gradient(x, y);
  const std::size_t d = x.sample_size();
  std::vector<double> dir(d), delta(d);
  for (std::size_t r = 0; r < x.batch(); ++r) {
    const auto gr = g.row(r);
    const auto xr = x.row(r);
    auto adv = out.adversarial.row(r);
    const double n = l2_norm(gr);
    out.samples[r].iterations = 1;
    if (!(n > 0.0) || !std::isfinite(n)) {
      out.samples[r].null_gradient = true;
      continue;
    }
    if (spec.fgs_sign) {
      for (std::size_t i = 0; i < d; ++i)
        adv[i] = clamp(xr[i] + spec.fgs_epsilon * ((gr[i] > 0) - (gr[i] < 0)), spec.lo, spec.hi);
      continue;
    }
    for (std::size_t i = 0; i < d; ++i) dir[i] = gr[i] / n;
    if (spec.fgs_clip_aware) {
      out.samples[r].budget_unreachable =
          !clip_aware_step(xr, dir, spec.fgs_epsilon, spec.lo, spec.hi, delta);
      // Rounding in x + delta can push the measured norm a few ulps past epsilon.
      for (double shrink = 1.0;; shrink *= 1.0 - 1e-12) {
        for (std::size_t i = 0; i < d; ++i) adv[i] = clamp(xr[i] + shrink * delta[i], spec.lo, spec.hi);
        if (l2_distance(adv, xr) <= spec.fgs_epsilon) break;
      }
    } else {
      for (std::size_t i = 0; i < d; ++i)
        adv[i] = clamp(xr[i] + spec.fgs_epsilon * dir[i], spec.lo, spec.hi);
    }
  }
  return out;
}

// ---------------------------------------------------------------------- PGD

AttackOutput pgd(const CompositeVictim& v, const Tensor& x_in, std::span<const std::size_t> y,
                 const AttackSpec& spec) {
  spec.validate();
  const Tensor x = batch_of(v, x_in, y);
  const std::size_t n = x.batch(), d = x.sample_size();
  AttackOutput out{x, std::vector<SampleResult>(n)};
  Tensor delta(x.shape(), 0.0);
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  std::vector<std::size_t> labels;
  for (std::size_t it = 0; it < spec.pgd_iterations && !active.empty(); ++it) {
    labels.clear();
    for (auto r : active) labels.push_back(y[r]);
    const Tensor xa = stack_rows(out.adversarial, active);
    const Tensor g = v.loss_gradient(xa, labels);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t r = active[k];
      auto dr = delta.row(r);
      const auto gr = g.row(k);
      const double gn = l2_norm(gr);
      ++out.samples[r].iterations;
      if (gn > 0.0 && std::isfinite(gn)) {
        for (std::size_t i = 0; i < d; ++i) dr[i] += spec.pgd_step * gr[i] / gn;
      } else {
        out.samples[r].null_gradient = true;
      }
      project_l2(dr, spec.pgd_epsilon);
      const auto xr = x.row(r);
      auto adv = out.adversarial.row(r);
      for (std::size_t i = 0; i < d; ++i) {
        adv[i] = clamp(xr[i] + dr[i], spec.lo, spec.hi);
        dr[i] = adv[i] - xr[i];  // clipping only shrinks coordinates, staying inside the ball
      }
    }
    if (spec.pgd_early_stop) {
      const auto pred = predictions(v.logits(stack_rows(out.adversarial, active)));
      std::vector<std::size_t> keep;
      for (std::size_t k = 0; k < active.size(); ++k)
        if (pred[k] == y[active[k]]) keep.push_back(active[k]);
      active.swap(keep);
    }
  }
  return out;
}

// ----------------------------------------------------------------------- CW

AttackOutput cw(const CompositeVictim& v, const Tensor& x_in, std::span<const std::size_t> y,
                const AttackSpec& spec, std::size_t first_index) {
  spec.validate();
  const Tensor x = batch_of(v, x_in, y);
  const std::size_t n = x.batch(), d = x.sample_size(), k_classes = v.classes();
  AttackOutput out{x, std::vector<SampleResult>(n)};
  const double half = (spec.hi - spec.lo) / 2.0;
  constexpr double kShrink = 1.0 - 1e-6;
  constexpr double kUpper = 1e10;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  // w0 = atanh of x mapped to (-1, 1) and shrunk; x0 is its exact image.
  Tensor w0(x.shape()), x0(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    w0[i] = std::atanh(((x[i] - spec.lo) / half - 1.0) * kShrink);
    x0[i] = spec.lo + half * (std::tanh(w0[i]) + 1.0);
  }
  std::vector<double> best_l2(n, std::numeric_limits<double>::infinity());

  for (std::size_t lo_row = 0; lo_row < n; lo_row += spec.cw_batch_size) {
    const std::size_t hi_row = std::min(n, lo_row + spec.cw_batch_size);
    for (std::size_t restart = 0; restart < spec.cw_restarts; ++restart) {
      std::vector<double> c(n, spec.cw_initial_const), lower(n, 0.0), upper(n, kUpper);
      std::vector<char> diverged(n, 0);
      for (std::size_t step = 0; step < spec.cw_binary_steps; ++step) {
        Tensor w(x.shape()), m(x.shape(), 0.0), vv(x.shape(), 0.0);
        std::vector<std::size_t> active;
        for (std::size_t r = lo_row; r < hi_row; ++r) {
          auto wr = w.row(r);
          const auto w0r = w0.row(r);
          for (std::size_t i = 0; i < d; ++i) {
            double jitter = 0.0;
            if (restart > 0)
              jitter = 0.1 * (2.0 * unit_interval(derive_seed(spec.seed, {first_index + r, restart, i})) - 1.0);
            wr[i] = w0r[i] + jitter;
          }
          if (!diverged[r]) active.push_back(r);
        }
        std::vector<double> best_loss(n, std::numeric_limits<double>::infinity());
        std::vector<std::size_t> stale(n, 0);
        std::vector<char> success(n, 0);
        for (std::size_t it = 0; it < spec.cw_max_iterations && !active.empty(); ++it) {
          const std::size_t na = active.size();
          Tensor xa = with_batch(v.input_shape(), na);
          for (std::size_t k = 0; k < na; ++k) {
            const auto wr = w.row(active[k]);
            auto xr = xa.row(k);
            for (std::size_t i = 0; i < d; ++i) xr[i] = spec.lo + half * (std::tanh(wr[i]) + 1.0);
          }
          const auto e = v.evaluate(xa);
          Tensor weights({na, k_classes}, 0.0);
          std::vector<double> loss(na);
          for (std::size_t k = 0; k < na; ++k) {
            const std::size_t r = active[k];
            const auto z = e.logits.row(k);
            const std::size_t label = y[r];
            std::size_t other = label == 0 ? 1 : 0;
            for (std::size_t i = 0; i < k_classes; ++i)
              if (i != label && z[i] > z[other]) other = i;
            const double margin = z[label] - z[other] + spec.cw_confidence;
            const double l2 = l2_distance(xa.row(k), x0.row(r));
            loss[k] = l2 * l2 + c[r] * std::max(margin, 0.0);
            if (margin > 0.0) {
              weights[k * k_classes + label] = c[r];
              weights[k * k_classes + other] = -c[r];
            }
            if (margin <= 0.0 && argmax(z) != label) {
              success[r] = 1;
              if (l2 < best_l2[r]) {
                best_l2[r] = l2;
                const auto xr = xa.row(k);
                std::copy(xr.begin(), xr.end(), out.adversarial.row(r).begin());
              }
            }
          }
          const Tensor gz = v.vjp(e, weights);
          const double t = static_cast<double>(it + 1);
          const double lr = spec.cw_learning_rate * std::sqrt(1.0 - std::pow(kBeta2, t)) /
                            (1.0 - std::pow(kBeta1, t));
          std::vector<std::size_t> keep;
          for (std::size_t k = 0; k < na; ++k) {
            const std::size_t r = active[k];
            ++out.samples[r].iterations;
            if (!std::isfinite(loss[k])) {
              diverged[r] = 1;  // abandon this restart for the sample
              continue;
            }
            auto wr = w.row(r);
            auto mr = m.row(r);
            auto vr = vv.row(r);
            const auto xr = xa.row(k);
            const auto x0r = x0.row(r);
            const auto gr = gz.row(k);
            for (std::size_t i = 0; i < d; ++i) {
              const double th = std::tanh(wr[i]);
              const double gx = 2.0 * (xr[i] - x0r[i]) + gr[i];
              const double gw = gx * half * (1.0 - th * th);
              mr[i] = kBeta1 * mr[i] + (1.0 - kBeta1) * gw;
              vr[i] = kBeta2 * vr[i] + (1.0 - kBeta2) * gw * gw;
              wr[i] -= lr * mr[i] / (std::sqrt(vr[i]) + kAdamEps);
            }
            if (loss[k] < best_loss[r] * (1.0 - 1e-4)) {
              best_loss[r] = loss[k];
              stale[r] = 0;
            } else if (spec.cw_abort_early && ++stale[r] >= spec.cw_abort_window) {
              continue;
            }
            keep.push_back(r);
          }
          active.swap(keep);
        }
        for (std::size_t r = lo_row; r < hi_row; ++r) {
          if (diverged[r]) continue;
          if (success[r]) {
            upper[r] = std::min(upper[r], c[r]);
            if (upper[r] < kUpper / 10) c[r] = (lower[r] + upper[r]) / 2.0;
          } else {
            lower[r] = std::max(lower[r], c[r]);
            c[r] = upper[r] < kUpper / 10 ? (lower[r] + upper[r]) / 2.0 : c[r] * 10.0;
          }
        }
      }
    }
  }
  for (std::size_t r = 0; r < n; ++r) out.samples[r].attack_failed = !std::isfinite(best_l2[r]);
  return out;
}

// ----------------------------------------------------------------- DeepFool

AttackOutput deepfool(const CompositeVictim& v, const Tensor& x_in, std::span<const std::size_t> y,
                      const AttackSpec& spec) {
  spec.validate();
  const Tensor x = batch_of(v, x_in, y);
  const std::size_t n = x.batch(), d = x.sample_size(), k_classes = v.classes();
  AttackOutput out{x, std::vector<SampleResult>(n)};
  Tensor r_tot(x.shape(), 0.0);
  const double scale = 1.0 + spec.df_overshoot;
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);

  for (std::size_t it = 0; !active.empty(); ++it) {
    const Tensor xa = stack_rows(out.adversarial, active);
    const auto e = v.evaluate(xa);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k)
      if (argmax(e.logits.row(k)) == y[active[k]]) still.push_back(k);
    if (still.empty()) break;
    if (it == spec.df_max_iterations) {
      for (auto k : still) out.samples[active[k]].attack_failed = true;
      break;
    }
    const auto rows = v.jacobian(e);
    std::vector<std::size_t> next;
    for (auto k : still) {
      const std::size_t r = active[k];
      const std::size_t label = y[r];
      const auto z = e.logits.row(k);
      const auto g_label = rows[label].row(k);
      double best_score = std::numeric_limits<double>::infinity();
      std::size_t best = k_classes;
      double best_f = 0.0, best_n2 = 0.0;
      for (std::size_t c = 0; c < k_classes; ++c) {
        if (c == label) continue;
        const auto gc = rows[c].row(k);
        double n2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) n2 += (gc[i] - g_label[i]) * (gc[i] - g_label[i]);
        if (!(n2 > 0.0)) continue;
        const double f = std::abs(z[c] - z[label]);
        const double score = spec.df_squared_norm_argmin ? f / n2 : f / std::sqrt(n2);
        if (score < best_score) {  // strict: ties keep the lowest class index
          best_score = score;
          best = c;
          best_f = f;
          best_n2 = n2;
        }
      }
      if (best == k_classes) {
        out.samples[r].null_gradient = true;
        out.samples[r].attack_failed = true;
        continue;
      }
      const auto gb = rows[best].row(k);
      auto rt = r_tot.row(r);
      for (std::size_t i = 0; i < d; ++i) rt[i] += best_f / best_n2 * (gb[i] - g_label[i]);
      const auto xr = x.row(r);
      auto adv = out.adversarial.row(r);
      for (std::size_t i = 0; i < d; ++i) adv[i] = clamp(xr[i] + scale * rt[i], spec.lo, spec.hi);
      ++out.samples[r].iterations;
      next.push_back(r);
    }
    active.swap(next);
  }
  return out;
}

AttackOutput run(const CompositeVictim& v, const Tensor& x, std::span<const std::size_t> y,
                 const AttackSpec& spec, std::size_t first_index) {
  switch (spec.algorithm) {
    case Algorithm::fgs: return fgs(v, x, y, spec);
    case Algorithm::pgd: return pgd(v, x, y, spec);
    case Algorithm::cw: return cw(v, x, y, spec, first_index);
    case Algorithm::deepfool: return deepfool(v, x, y, spec);
  }
  throw PreconditionError("unknown algorithm");
}

// -------------------------------------------------------------- attack sets

AttackSet generate_attack_set(const AttackSpec& spec, const CompositeVictim& composite,
                              const Dataset& dataset, std::size_t batch) {
  spec.validate();
  if (!dataset.inputs.all_finite()) throw PreconditionError("attack set: dataset is not finite");
  AttackSet set;
  set.spec = spec;
  for (std::size_t i = 0; i < composite.size(); ++i) set.victims.push_back(composite.system(i).name);
  set.labels = dataset.labels;
  set.adversarial = dataset.inputs;
  const std::size_t n = dataset.size();
  std::vector<SampleResult> results(n);
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    const std::size_t hi = std::min(n, lo + batch);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Tensor xb = stack_rows(dataset.inputs, idx);
    const std::span<const std::size_t> yb(dataset.labels.data() + lo, hi - lo);
    auto store = [&](const AttackOutput& o, std::size_t at) {
      for (std::size_t k = 0; k < o.samples.size(); ++k) {
        const auto src = o.adversarial.row(k);
        std::copy(src.begin(), src.end(), set.adversarial.row(at + k).begin());
        results[at + k] = o.samples[k];
      }
    };
    try {
      store(run(composite, xb, yb, spec, lo), lo);
    } catch (const Error&) {
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t one[] = {i};
        try {
          store(run(composite, stack_rows(dataset.inputs, one), yb.subspan(i - lo, 1), spec, i), i);
        } catch (const Error& e) {
          results[i].error = e.kind() + ": " + e.what();
        }
      }
    }
  }
  const auto per_system = composite.per_system_predictions(set.adversarial);
  const auto mean_pred = predictions(composite.logits(set.adversarial));
  for (std::size_t i = 0; i < n; ++i) {
    SampleMeta m;
    m.sample_id = i;
    m.l2_norm = l2_distance(set.adversarial.row(i), dataset.inputs.row(i));
    m.success = mean_pred[i] != dataset.labels[i];
    for (const auto& p : per_system) m.predicted.push_back(p[i]);
    m.result = results[i];
    set.meta.push_back(std::move(m));
  }
  return set;
}

namespace {

json result_to_json(const SampleResult& r) {
  return {{"null_gradient", r.null_gradient}, {"attack_failed", r.attack_failed},
          {"budget_unreachable", r.budget_unreachable}, {"iterations", r.iterations},
          {"error", r.error}};
}

SampleResult result_from_json(const json& j) {
  SampleResult r;
  r.null_gradient = j.at("null_gradient").get<bool>();
  r.attack_failed = j.at("attack_failed").get<bool>();
  r.budget_unreachable = j.at("budget_unreachable").get<bool>();
  r.iterations = j.at("iterations").get<std::size_t>();
  r.error = j.at("error").get<std::string>();
  return r;
}

}  // namespace

void save_attack_set(const AttackSet& set, const std::filesystem::path& path) {
  json meta = json::array();
  for (const auto& m : set.meta)
    meta.push_back({{"sample_id", m.sample_id}, {"l2_norm", m.l2_norm}, {"success", m.success},
                    {"predicted", m.predicted}, {"result", result_to_json(m.result)}});
  json header = {{"section", "ADVSET"}, {"spec", set.spec.to_json()}, {"victims", set.victims},
                 {"labels", set.labels}, {"meta", meta}};
  container::write_file(path, container::encode(std::move(header), {&set.adversarial}));
}

AttackSet load_attack_set(const std::filesystem::path& path) {
  auto c = container::decode(container::read_file(path));
  try {
    if (c.header.at("section") != "ADVSET")
      throw FormatError("wrong_section", path.string() + " is not an adversarial set");
    AttackSet s;
    s.spec = AttackSpec::from_json(c.header.at("spec"));
    s.victims = c.header.at("victims").get<std::vector<std::string>>();
    s.labels = c.header.at("labels").get<std::vector<std::size_t>>();
    for (const auto& m : c.header.at("meta")) {
      SampleMeta sm;
      sm.sample_id = m.at("sample_id").get<std::size_t>();
      sm.l2_norm = m.at("l2_norm").get<double>();
      sm.success = m.at("success").get<bool>();
      sm.predicted = m.at("predicted").get<std::vector<std::size_t>>();
      sm.result = result_from_json(m.at("result"));
      s.meta.push_back(std::move(sm));
    }
    if (c.blobs.size() != 1) throw FormatError("malformed", "adversarial set needs one blob");
    s.adversarial = std::move(c.blobs[0]);
    return s;
  } catch (const json::exception& e) {
    throw FormatError("malformed", std::string("adversarial set header: ") + e.what());
  }
}

void write_metadata_csv(const AttackSet& set, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("io", "cannot write " + path.string());
  f << "sample_id,algorithm,l2_norm,success,predicted_class\n";
  char buf[64];
  for (const auto& m : set.meta) {
    std::snprintf(buf, sizeof buf, "%.17g", m.l2_norm);
    f << m.sample_id << ',' << algorithm_name(set.spec.algorithm) << ',' << buf << ','
      << (m.success ? 1 : 0) << ',';
    for (std::size_t i = 0; i < m.predicted.size(); ++i) f << (i ? ";" : "") << m.predicted[i];
    f << '\n';
  }
}

}  // namespace abf::attacks
