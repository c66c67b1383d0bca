#pragma once

// Finite-difference verification of analytic gradients.
//
// Each op kind has a small fragment (random inputs, a builder) whose output is
// contracted with fixed random weights into a scalar. Probes compare the
// analytic derivative of one input element with a central difference; probes
// whose perturbation flips a non-smooth branch (gate, max, sign) are redrawn.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vesselkit/graph.hpp"
#include "vesselkit/pipeline.hpp"

namespace vk {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  int probes = 20;
  std::uint64_t seed = 7;
  int max_draws = 400;
};

struct Fragment {
  std::string op;
  std::vector<Tensor<double>> inputs;
  std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)> build;
};

struct OpCheck {
  std::string op;
  int probes = 0;
  int skipped = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string note;
};

struct GradCheckReport {
  std::vector<OpCheck> checks;

  bool passed() const;
  std::string format() const;
};

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

OpCheck check_fragment(const Fragment& f, const GradCheckOptions& opts);

/// Fragment exercising one op kind; nullopt if none is registered.
std::optional<Fragment> fragment_for(const std::string& op, std::uint64_t seed);
/// Op kinds with a registered fragment.
std::vector<std::string> registered_ops();

/// Square whose backward is deliberately wrong (negative control).
Var<double> faulty_square(Var<double> x);

/// Checks every op kind reachable from the pipeline's forward pass and total
/// loss, plus an end-to-end probe over its trainable parameters. With
/// inject_fault the deliberately wrong op is added to the checked set.
GradCheckReport grad_check_pipeline(const PipelineConfig& cfg, const GradCheckOptions& opts,
                                    bool inject_fault = false);

}  // namespace vk
