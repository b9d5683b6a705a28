#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dernn/autograd.hpp"

namespace dernn {

// A scalar objective built on a fresh graph; parameters must be pulled in
// through g.param(store, name) so both gradient routes see the same store.
using ScalarProgram = std::function<ad::Var(ad::Graph&)>;

struct GradcheckOptions {
  double step = 1e-5;        // central-difference half width h
  double tolerance = 1e-3;   // relative error threshold
  // Denominator floor for the relative error: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  int samples = 50;          // <= 0 checks every trainable scalar
  std::uint64_t seed = 0;
};

struct GradcheckProbe {
  std::string name;
  Index index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradcheckReport {
  std::vector<GradcheckProbe> probes;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Compares reverse-mode gradients of `f` against central differences on
// randomly sampled trainable entries of `params`. `params` is perturbed in
// place and restored before returning.
GradcheckReport fd_gradcheck(const ScalarProgram& f, ParamStore& params, const GradcheckOptions& opt = {});

}  // namespace dernn
