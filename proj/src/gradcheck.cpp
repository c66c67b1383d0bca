#include "vesselkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "vesselkit/frangi.hpp"
#include "vesselkit/ops.hpp"
#include "vesselkit/scale_space.hpp"
#include "vesselkit/training.hpp"
#include "vesselkit/unet.hpp"

namespace vk {

bool GradCheckReport::passed() const {
  return !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const OpCheck& c) { return c.passed; });
}

std::string GradCheckReport::format() const {
  std::size_t w = 2;
  for (const auto& c : checks) w = std::max(w, c.op.size());
  std::string out = fmt::format("{:<{}}  {:>6}  {:>7}  {:>13}  {}\n", "op", w, "probes", "skipped",
                                "max_rel_error", "result");
  for (const auto& c : checks) {
    out += fmt::format("{:<{}}  {:>6}  {:>7}  {:>13.3e}  {}{}\n", c.op, w, c.probes, c.skipped, c.max_rel_error,
                       c.passed ? "PASS" : "FAIL", c.note.empty() ? "" : "  (" + c.note + ")");
  }
  out += fmt::format("overall: {}\n", passed() ? "PASS" : "FAIL");
  return out;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
  double loss;
  std::uint64_t signature;
};

// Scalar contraction of the fragment output with fixed weights.
Var<double> contract(Graph<double>& g, Var<double> out, const Tensor<double>& weights) {
  if (out.value().size() == 1) return out;
  return sum<double>(mul<double>(out, g.constant(weights)));
}

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Keeps values at least `gap` away from zero (for kinked ops).
Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng, double gap) {
  Tensor<double> t = random_tensor(s, rng, gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values()) {
    if (sign(rng)) v = -v;
  }
  return t;
}

OpCheck run_probes(const std::string& op, std::vector<Tensor<double>*> targets,
                   const std::function<Evaluation()>& evaluate,
                   const std::function<std::vector<const Tensor<double>*>()>& analytic,
                   const GradCheckOptions& opts, std::uint64_t seed, double min_gradient = 0.0) {
  OpCheck c;
  c.op = op;
  const Evaluation base = evaluate();
  const std::vector<const Tensor<double>*> grads = analytic();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i]->size() > 0 && grads[i] != nullptr) candidates.push_back(i);
  }
  if (candidates.empty()) {
    c.note = "no differentiable inputs";
    return c;
  }
  std::uniform_int_distribution<std::size_t> pick_input(0, candidates.size() - 1);
  int draws = 0;
  while (c.probes < opts.probes && draws < opts.max_draws) {
    ++draws;
    const std::size_t which = candidates[pick_input(rng)];
    Tensor<double>& t = *targets[which];
    std::uniform_int_distribution<std::size_t> pick_elem(0, t.size() - 1);
    const std::size_t e = pick_elem(rng);
    // Gradients below the finite-difference noise floor cannot be resolved.
    if (std::abs((*grads[which])[e]) < min_gradient) {
      ++c.skipped;
      continue;
    }
    const double orig = t[e];
    t[e] = orig + opts.step;
    const Evaluation plus = evaluate();
    t[e] = orig - opts.step;
    const Evaluation minus = evaluate();
    t[e] = orig;
    if (plus.signature != base.signature || minus.signature != base.signature) {
      ++c.skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * opts.step);
    const double a = (*grads[which])[e];
    c.max_rel_error = std::max(c.max_rel_error, relative_error(a, numeric));
    ++c.probes;
  }
  c.passed = c.probes >= opts.probes && c.max_rel_error < opts.tolerance;
  if (c.probes < opts.probes) {
    c.note = fmt::format("only {} of {} probes avoided branch changes", c.probes, opts.probes);
  }
  return c;
}

}  // namespace

OpCheck check_fragment(const Fragment& f, const GradCheckOptions& opts) {
  std::vector<Tensor<double>> inputs = f.inputs;
  Tensor<double> weights;
  {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    std::mt19937_64 rng(opts.seed ^ 0xA5A5ULL);
    weights = random_tensor(f.build(g, leaves).shape(), rng, -1.0, 1.0);
  }
  auto evaluate = [&]() {
    Graph<double> g;
    g.set_track_branches(true);
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    Var<double> loss = contract(g, f.build(g, leaves), weights);
    return Evaluation{loss.value()[0], g.branch_signature()};
  };
  std::vector<Tensor<double>> grads;
  Graph<double> ag;
  auto analytic = [&]() {
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(ag.leaf(t));
    Var<double> loss = contract(ag, f.build(ag, leaves), weights);
    ag.backward(loss);
    std::vector<const Tensor<double>*> out;
    for (const auto& l : leaves) {
      grads.push_back(ag.grad(l));
    }
    for (const auto& gr : grads) out.push_back(gr.empty() ? nullptr : &gr);
    return out;
  };
  std::vector<Tensor<double>*> targets;
  for (auto& t : inputs) targets.push_back(&t);
  return run_probes(f.op, targets, evaluate, analytic, opts, opts.seed);
}

Var<double> faulty_square(Var<double> x) {
  Tensor<double> out = x.value();
  for (auto& v : out.values()) v *= v;
  return x.graph()->record("faulty_square", {x}, std::move(out), [](BackwardContext<double>& ctx) {
    if (!ctx.input_grads[0]) return;
    const Tensor<double>& in = *ctx.inputs[0];
    for (std::size_t i = 0; i < in.size(); ++i) {
      (*ctx.input_grads[0])[i] += ctx.grad_output[i] * 2.2 * in[i];
    }
  });
}

namespace {

using Builder = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

std::map<std::string, std::function<Fragment(std::mt19937_64&)>> make_registry() {
  std::map<std::string, std::function<Fragment(std::mt19937_64&)>> r;
  const Shape small{1, 2, 4, 5};
  auto unary = [&](const std::string& op, double lo, double hi, std::function<Var<double>(Var<double>)> fn) {
    r[op] = [op, lo, hi, fn, small](std::mt19937_64& rng) {
      return Fragment{op, {random_tensor(small, rng, lo, hi)},
                      [fn](Graph<double>&, const std::vector<Var<double>>& v) { return fn(v[0]); }};
    };
  };
  auto kinked = [&](const std::string& op, std::function<Var<double>(Var<double>)> fn) {
    r[op] = [op, fn, small](std::mt19937_64& rng) {
      return Fragment{op, {away_from_zero(small, rng, 0.05)},
                      [fn](Graph<double>&, const std::vector<Var<double>>& v) { return fn(v[0]); }};
    };
  };
  auto binary = [&](const std::string& op, double lo_b, std::function<Var<double>(Var<double>, Var<double>)> fn) {
    r[op] = [op, lo_b, fn, small](std::mt19937_64& rng) {
      return Fragment{op, {random_tensor(small, rng, -1.0, 1.0), random_tensor(small, rng, lo_b, 1.5)},
                      [fn](Graph<double>&, const std::vector<Var<double>>& v) { return fn(v[0], v[1]); }};
    };
  };

  binary("add", -1.0, [](auto a, auto b) { return add<double>(a, b); });
  binary("sub", -1.0, [](auto a, auto b) { return sub<double>(a, b); });
  binary("mul", -1.0, [](auto a, auto b) { return mul<double>(a, b); });
  binary("div", 0.5, [](auto a, auto b) { return div<double>(a, b); });
  unary("add_scalar", -1.0, 1.0, [](auto x) { return add_scalar<double>(x, 0.3); });
  unary("scale", -1.0, 1.0, [](auto x) { return scale<double>(x, -1.7); });
  unary("exp", -1.0, 1.0, [](auto x) { return exp<double>(x); });
  unary("sqrt", 0.3, 2.0, [](auto x) { return sqrt<double>(x); });
  unary("sigmoid", -3.0, 3.0, [](auto x) { return sigmoid<double>(x); });
  unary("square", -1.0, 1.0, [](auto x) { return square<double>(x); });
  unary("center_planes", -1.0, 1.0, [](auto x) { return center_planes<double>(x); });
  unary("sum", -1.0, 1.0, [](auto x) { return sum<double>(x); });
  unary("mean", -1.0, 1.0, [](auto x) { return mean<double>(x); });
  unary("softmax_channels", -2.0, 2.0, [](auto x) { return softmax_channels<double>(x); });
  unary("upsample_nearest2x", -1.0, 1.0, [](auto x) { return upsample_nearest2x<double>(x); });
  unary("pad_reflect", -1.0, 1.0, [](auto x) { return pad_reflect<double>(x, 1, 2, 2, 1); });
  unary("crop", -1.0, 1.0, [](auto x) { return crop<double>(x, 1, 1, 2, 3); });
  unary("slice_channels", -1.0, 1.0, [](auto x) { return slice_channels<double>(x, 1, 1); });
  unary("box_mean", -1.0, 1.0, [](auto x) { return box_mean<double>(x, 1); });
  kinked("leaky_relu", [](auto x) { return leaky_relu<double>(x, 0.2); });
  kinked("relu", [](auto x) { return relu<double>(x); });
  kinked("abs", [](auto x) { return abs<double>(x); });
  kinked("max_over_channels", [](auto x) { return max_over_channels<double>(x); });
  r["faulty_square"] = [small](std::mt19937_64& rng) {
    return Fragment{"faulty_square", {random_tensor(small, rng, 0.5, 1.0)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) { return faulty_square(v[0]); }};
  };
  r["max_pool2x2"] = [](std::mt19937_64& rng) {
    return Fragment{"max_pool2x2", {random_tensor(Shape{1, 2, 4, 6}, rng, -1.0, 1.0)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) { return max_pool2x2<double>(v[0]); }};
  };
  r["concat_channels"] = [](std::mt19937_64& rng) {
    return Fragment{"concat_channels",
                    {random_tensor(Shape{1, 1, 3, 3}, rng, -1, 1), random_tensor(Shape{1, 2, 3, 3}, rng, -1, 1)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) {
                      return concat_channels<double>({v[0], v[1]});
                    }};
  };
  r["affine_channels"] = [](std::mt19937_64& rng) {
    return Fragment{"affine_channels",
                    {random_tensor(Shape{2, 3, 3, 3}, rng, -1, 1), random_tensor(Shape{1, 3, 1, 1}, rng, -1, 1),
                     random_tensor(Shape{1, 3, 1, 1}, rng, -1, 1)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) {
                      return affine_channels<double>(v[0], v[1], v[2]);
                    }};
  };
  r["conv2d"] = [](std::mt19937_64& rng) {
    return Fragment{"conv2d",
                    {random_tensor(Shape{2, 2, 7, 6}, rng, -1, 1), random_tensor(Shape{3, 2, 3, 3}, rng, -1, 1),
                     random_tensor(Shape{1, 3, 1, 1}, rng, -1, 1)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) {
                      return conv2d<double>(v[0], v[1], v[2], ConvOptions::same(3, 2));
                    }};
  };
  r["mse"] = [small](std::mt19937_64& rng) {
    return Fragment{"mse", {random_tensor(small, rng, -1, 1), random_tensor(small, rng, -1, 1)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) { return mse<double>(v[0], v[1]); }};
  };
  r["eig2x2_sym"] = [](std::mt19937_64& rng) {
    return Fragment{"eig2x2_sym", {random_tensor(Shape{1, 3, 4, 4}, rng, -1, 1)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) { return eig2x2_sym<double>(v[0]); }};
  };
  r["vesselness"] = [](std::mt19937_64& rng) {
    Tensor<double> lam = random_tensor(Shape{1, 2, 4, 4}, rng, -0.3, 1.0);
    return Fragment{"vesselness",
                    {lam, Tensor<double>::scalar(0.7), Tensor<double>::scalar(0.8)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) {
                      return vesselness<double>(v[0], v[1], v[2]);
                    }};
  };
  r["focal_loss"] = [](std::mt19937_64& rng) {
    Tensor<double> labels(Shape{2, 1, 3, 3});
    Tensor<double> weight = random_tensor(Shape{2, 1, 3, 3}, rng, 0.2, 2.0);
    std::bernoulli_distribution coin(0.4);
    for (auto& v : labels.values()) v = coin(rng) ? 1.0 : 0.0;
    return Fragment{"focal_loss", {random_tensor(Shape{2, 2, 3, 3}, rng, -2, 2)},
                    [labels, weight](Graph<double>&, const std::vector<Var<double>>& v) {
                      return focal_loss<double>(softmax_channels<double>(v[0]), labels, weight, LossConfig{});
                    }};
  };
  r["norm_layer"] = [](std::mt19937_64& rng) {
    return Fragment{"norm_layer",
                    {random_tensor(Shape{2, 2, 3, 3}, rng, -1, 1), random_tensor(Shape{1, 2, 1, 1}, rng, 0.5, 1.5),
                     random_tensor(Shape{1, 2, 1, 1}, rng, -1, 1)},
                    [](Graph<double>&, const std::vector<Var<double>>& v) {
                      return norm_layer<double>(v[0], v[1], v[2], true, nullptr, nullptr);
                    }};
  };
  return r;
}

const std::map<std::string, std::function<Fragment(std::mt19937_64&)>>& registry() {
  static const auto r = make_registry();
  return r;
}

}  // namespace

std::optional<Fragment> fragment_for(const std::string& op, std::uint64_t seed) {
  auto it = registry().find(op);
  if (it == registry().end()) return std::nullopt;
  std::mt19937_64 rng(seed);
  return it->second(rng);
}

std::vector<std::string> registered_ops() {
  std::vector<std::string> out;
  for (const auto& [k, _] : registry()) out.push_back(k);
  return out;
}

GradCheckReport grad_check_pipeline(const PipelineConfig& cfg_in, const GradCheckOptions& opts,
                                    bool inject_fault) {
  PipelineConfig cfg = cfg_in;
  cfg.validate(true);
  Pipeline<double> pipeline(cfg);
  pipeline.set_training(true);

  PhantomConfig pc = cfg.data.phantom;
  pc.height = 32;
  pc.width = 32;
  pc.n_trees = 3;
  pc.diameter_max = std::min(pc.diameter_max, 4.0);
  pc.seed = opts.seed;
  const LabeledSample sample = generate(pc);
  const Tensor<double> image = to_tensor<double>(sample.image);
  const Tensor<double> label = to_tensor<double>(sample.label);
  Tensor<double> weight = to_tensor<double>(sample.weight);
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (!sample.fov.data[i]) weight[i] = 0.0;
  }
  const auto params = pipeline.trainable();

  auto build = [&](Graph<double>& g) {
    auto f = pipeline.forward(g, g.constant(image));
    return total_loss<double>(f.probs, label, weight, params, f.prep_in, f.prep_out, cfg.loss).total;
  };

  std::vector<std::string> kinds;
  {
    Graph<double> g;
    build(g);
    kinds = g.op_kinds();
  }
  if (inject_fault) kinds.push_back("faulty_square");

  GradCheckReport report;
  std::uint64_t salt = 0;
  for (const auto& op : kinds) {
    auto frag = fragment_for(op, opts.seed + (++salt) * 7919);
    if (!frag) {
      report.checks.push_back({op, 0, 0, 0.0, false, "no gradient fragment registered"});
      continue;
    }
    report.checks.push_back(check_fragment(*frag, opts));
  }

  // End to end over the pipeline's own parameters.
  std::vector<Tensor<double>*> targets;
  for (auto* p : params) targets.push_back(&p->value);
  auto evaluate = [&]() {
    Graph<double> g;
    g.set_track_branches(true);
    Var<double> loss = build(g);
    return Evaluation{loss.value()[0], g.branch_signature()};
  };
  auto analytic = [&]() {
    for (auto* p : params) p->zero_grad();
    Graph<double> g;
    g.backward(build(g));
    std::vector<const Tensor<double>*> out;
    for (auto* p : params) out.push_back(&p->grad);
    return out;
  };
  // A full-pipeline loss sums thousands of terms, so its rounding noise is far
  // above that of a fragment; probes need a gradient well above it.
  const double floor = 50.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(evaluate().loss)) /
                       (opts.step * opts.tolerance);
  OpCheck e2e = run_probes("pipeline (end to end)", targets, evaluate, analytic, opts, opts.seed + 1, floor);
  report.checks.push_back(e2e);
  return report;
}

}  // namespace vk
