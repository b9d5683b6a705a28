#include "dernn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dernn {

namespace {

double evaluate(const ScalarProgram& f) {
  ad::Graph g;
  ad::Var out = f(g);
  if (out.value().size() != 1) throw InvalidShape("fd_gradcheck: objective must be scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericalError("fd_gradcheck: objective is not finite");
  return v;
}

}  // namespace

GradcheckReport fd_gradcheck(const ScalarProgram& f, ParamStore& params, const GradcheckOptions& opt) {
  if (!(opt.step > 0.0)) throw InvalidParameter("fd_gradcheck: step must be positive");

  GradientMap grads;
  {
    ad::Graph g;
    ad::Var out = f(g);
    if (out.value().size() != 1) throw InvalidShape("fd_gradcheck: objective must be scalar");
    if (!std::isfinite(out.value()[0])) throw NumericalError("fd_gradcheck: objective is not finite");
    grads = g.backward(out);
  }

  std::vector<std::pair<std::string, Index>> candidates;
  for (const auto& [name, t] : params) {
    if (!ParamStore::is_trainable(name)) continue;
    for (Index i = 0; i < t.size(); ++i) candidates.emplace_back(name, i);
  }
  if (candidates.empty()) throw InvalidParameter("fd_gradcheck: no trainable parameters");

  std::vector<std::pair<std::string, Index>> chosen;
  if (opt.samples <= 0 || static_cast<std::size_t>(opt.samples) >= candidates.size()) {
    chosen = candidates;
  } else {
    Rng rng = make_rng(opt.seed, Stream::kTest);
    std::vector<std::pair<std::string, Index>> pool = candidates;
    for (int s = 0; s < opt.samples; ++s) {
      const auto j = static_cast<std::size_t>(s) +
                     static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size() - static_cast<std::size_t>(s)));
      std::swap(pool[static_cast<std::size_t>(s)], pool[std::min(j, pool.size() - 1)]);
      chosen.push_back(pool[static_cast<std::size_t>(s)]);
    }
  }

  GradcheckReport report;
  for (const auto& [name, idx] : chosen) {
    Tensor& t = params.at(name);
    const double saved = t[idx];
    t[idx] = saved + opt.step;
    const double fp = evaluate(f);
    t[idx] = saved - opt.step;
    const double fm = evaluate(f);
    t[idx] = saved;

    const double numeric = (fp - fm) / (2.0 * opt.step);
    auto it = grads.find(name);
    const double analytic = it == grads.end() ? 0.0 : it->second[idx];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    report.probes.push_back({name, idx, analytic, numeric, rel});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.passed = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace dernn
