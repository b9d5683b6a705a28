// dernn: make synthetic scenes, simulate measurements, reconstruct cubes, train the learned
// recurrence and run the oracle self-test.
//
// Exit codes: 0 success, 1 selftest failure, 2 format, 3 shape,
// 4 missing dependency, 5 divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "dernn/cassi.hpp"
#include "dernn/hqs.hpp"
#include "dernn/io.hpp"
#include "dernn/metrics.hpp"
#include "dernn/phantom.hpp"
#include "dernn/selftest.hpp"
#include "dernn/trainer.hpp"

using namespace dernn;

namespace {

enum Exit : int { kOk = 0, kSelftestFailed = 1, kFormat = 2, kShape = 3, kMissing = 4, kDiverged = 5 };

struct SimulateArgs {
  std::string truth, mask, out, mask_out;
  std::optional<std::uint64_t> mask_seed;
  Index step = 2;
  std::string noise = "shot";
  int bits = 11;
  std::uint64_t seed = 0;
};

struct ReconstructArgs {
  std::string measurement, mask, params, truth, out, trace, metrics;
  Index step = 2;
  std::optional<Index> bands;
  int stages = 9;
  std::string denoiser = "tv";
  bool use_den = false;
  double mu1 = 1e-4, mu_growth = 3.0, lambda = 1e-4;
  int tv_iters = 20;
};

struct TrainArgs {
  std::string truth, mask, out, curve;
  std::optional<std::uint64_t> mask_seed;
  Index step = 2;
  int stages = 3, steps = 500, warmup = 20;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  std::string noise = "none";
  int bits = 11;
  Index channels = 8, blocks = 1, window_size = 4, window_count = 2, den_blocks = 3;
};

struct PhantomArgs {
  Index height = 64, width = 64, bands = 8;
  std::uint64_t seed = 0;
  std::string out;
};

struct SelftestArgs {
  std::string level = "quick";
  std::uint64_t seed = 0;
  bool tamper_conv = false;
};

Tensor as_plane(const Tensor& t, const char* what) {
  if (t.dim(2) != 1) throw InvalidShape(std::string(what) + " must have a single band, got " + shape_string(t.shape()));
  return t.reshaped({t.dim(0), t.dim(1)});
}

NoiseConfig noise_from(const std::string& kind, int bits, std::uint64_t seed) {
  NoiseConfig n;
  n.kind = kind == "shot" ? NoiseKind::kShot : NoiseKind::kNone;
  n.bits = bits;
  n.seed = seed;
  return n;
}

std::string default_mask_out(const std::string& out) {
  std::filesystem::path p(out);
  if (p.extension() == ".hsic") return (p.parent_path() / (p.stem().string() + ".mask.hsic")).string();
  return out + ".mask.hsic";
}

int run_simulate(const SimulateArgs& a) {
  const Tensor truth = io::read_hsic(a.truth);
  const Index bands = truth.dim(2);
  Tensor mask = a.mask.empty() ? random_binary_mask(truth.dim(0), truth.dim(1), a.mask_seed.value_or(a.seed))
                               : as_plane(io::read_hsic(a.mask), "mask");
  const SensingOp op = SensingOp::from_mask(mask, bands, a.step);
  detail::require_cube_matches(truth, op, "simulate truth");
  const Tensor y = forward_measure(truth, op, noise_from(a.noise, a.bits, a.seed));
  io::write_hsic(a.out, y);
  io::write_hsic(a.mask_out.empty() ? default_mask_out(a.out) : a.mask_out, op.shifted_mask());
  std::printf("measurement %lldx%lld from %lldx%lldx%lld cube (step %lld)\n", static_cast<long long>(y.dim(0)),
              static_cast<long long>(y.dim(1)), static_cast<long long>(truth.dim(0)),
              static_cast<long long>(truth.dim(1)), static_cast<long long>(bands), static_cast<long long>(a.step));
  return kOk;
}

// A single-band mask file is the coded aperture [H, W]; the band count then
// follows from the measurement width unless given. A multi-band file is the
// shifted mask itself.
SensingOp load_operator(const Tensor& mask_file, const Tensor& y, Index step, std::optional<Index> bands) {
  if (mask_file.dim(2) > 1) return SensingOp::from_shifted(mask_file, step);
  const Index w = mask_file.dim(1), ws = y.dim(1);
  Index n = 1;
  if (bands) {
    n = *bands;
  } else if (step > 0) {
    if ((ws - w) % step != 0 || ws < w) {
      throw InvalidShape("measurement width " + std::to_string(ws) + " inconsistent with mask width " +
                         std::to_string(w) + " at step " + std::to_string(step));
    }
    n = (ws - w) / step + 1;
  } else {
    throw InvalidShape("--bands is required with a 2D mask and step 0");
  }
  return SensingOp::from_mask(as_plane(mask_file, "mask"), n, step);
}

int run_reconstruct(const ReconstructArgs& a) {
  const Tensor y = as_plane(io::read_hsic(a.measurement), "measurement");
  const SensingOp op = load_operator(io::read_hsic(a.mask), y, a.step, a.bands);
  ReconConfig cfg;
  cfg.stages = a.stages;
  cfg.denoiser = a.denoiser == "lnlt" ? DenoiserKind::kLnlt
                 : a.denoiser == "identity" ? DenoiserKind::kIdentity
                                            : DenoiserKind::kTv;
  cfg.use_den = a.use_den;
  cfg.mu1 = a.mu1;
  cfg.mu_growth = a.mu_growth;
  cfg.lambda = a.lambda;
  cfg.tv_iters = a.tv_iters;

  std::optional<ParamStore> params;
  if (cfg.use_den || cfg.denoiser == DenoiserKind::kLnlt) {
    if (a.params.empty()) throw MissingDependency("--params is required for --denoiser lnlt or --use-den");
    params = io::read_params(a.params);
  }
  std::optional<Tensor> truth;
  if (!a.truth.empty()) truth = io::read_hsic(a.truth);

  const HqsResult r = run_hqs(y, op, cfg, params ? &*params : nullptr, truth ? &*truth : nullptr);
  io::write_hsic(a.out, r.estimate);
  if (!a.trace.empty()) io::write_file_atomic(a.trace, trace_csv(r));
  if (truth) {
    const double p = psnr(r.estimate, *truth), s = ssim(r.estimate, *truth);
    const SamResult angle = sam(r.estimate, *truth);
    std::printf("init_psnr=%.4f\npsnr=%.4f\nssim=%.6f\nsam=%.4f\n", *r.initial_psnr, p, s, angle.degrees);
    if (!a.metrics.empty()) {
      char row[256];
      std::snprintf(row, sizeof row, "%s,%.17g,%.17g,%.17g\n",
                    std::filesystem::path(a.truth).stem().string().c_str(), p, s, angle.degrees);
      io::write_file_atomic(a.metrics, std::string("scene_id,psnr,ssim,sam\n") + row);
    }
  }
  std::printf("residual_norm %.6g -> %.6g over %d stages\n", r.initial_residual_norm,
              r.trace.empty() ? r.initial_residual_norm : r.trace.back().residual_norm, a.stages);
  return kOk;
}

int run_train(const TrainArgs& a) {
  const Tensor truth = io::read_hsic(a.truth);
  const Index bands = truth.dim(2);
  const Tensor mask = a.mask.empty() ? random_binary_mask(truth.dim(0), truth.dim(1), a.mask_seed.value_or(a.seed))
                                     : as_plane(io::read_hsic(a.mask), "mask");
  const SensingOp op = SensingOp::from_mask(mask, bands, a.step);

  DenConfig den;
  den.bands = bands;
  den.blocks = a.den_blocks;
  LnltConfig lnlt;
  lnlt.bands = bands;
  lnlt.base_channels = a.channels;
  lnlt.blocks_per_level = a.blocks;
  lnlt.window_size = a.window_size;
  lnlt.window_count = a.window_count;
  lnlt.validate_extent(truth.dim(0), truth.dim(1));
  ParamStore params = init_dernn_params(den, lnlt, a.seed);

  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.warmup_steps = a.warmup;
  cfg.stages = a.stages;
  cfg.noise = noise_from(a.noise, a.bits, a.seed);
  const TrainResult r = train_overfit(truth, op, params, cfg);
  io::write_params(a.out, params);
  if (!a.curve.empty()) io::write_file_atomic(a.curve, loss_curve_csv(r));
  if (!r.curve.empty()) {
    std::printf("loss %.6g -> %.6g over %d steps\n", r.curve.front().loss, r.curve.back().loss, a.steps);
  }
  return kOk;
}

int run_phantom(const PhantomArgs& a) {
  io::write_hsic(a.out, make_phantom(a.height, a.width, a.bands, a.seed));
  return kOk;
}

int run_selftest_cmd(const SelftestArgs& a) {
  SelftestOptions opt;
  opt.level = a.level == "full" ? SelftestLevel::kFull : SelftestLevel::kQuick;
  opt.seed = a.seed;
  opt.tamper_conv_sign = a.tamper_conv;
  const auto checks = run_selftest(opt);
  std::fputs(selftest_table(checks).c_str(), stdout);
  if (all_passed(checks)) return kOk;
  std::string failed;
  for (const auto& c : checks) {
    if (!c.passed) failed += (failed.empty() ? "" : ", ") + c.name;
  }
  std::fprintf(stderr, "selftest failed: %s\n", failed.c_str());
  return kSelftestFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressive spectral imaging: simulation, reconstruction, training and self-test"};
  app.require_subcommand(1);
  // key = value lines, grouped under [simulate], [reconstruct] or [train]
  // (or written as reconstruct.stages = 3). Command-line flags win.
  app.set_config("--config", "", "defaults file");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a coded, dispersed measurement from a cube");
  s->add_option("--truth", sim.truth, "input cube (HSIC)")->required();
  auto* mask_opt = s->add_option("--mask", sim.mask, "coded aperture [H, W] (HSIC, one band)");
  s->add_option("--mask-seed", sim.mask_seed, "seed of a random binary aperture")->excludes(mask_opt);
  s->add_option("--step", sim.step, "dispersion shift per band, in pixels")->capture_default_str();
  s->add_option("--noise", sim.noise, "shot | none")->check(CLI::IsMember({"shot", "none"}))->capture_default_str();
  s->add_option("--bits", sim.bits, "shot-noise bit depth")->capture_default_str();
  s->add_option("--seed", sim.seed, "noise seed (and aperture seed without --mask-seed)")->capture_default_str();
  s->add_option("--out", sim.out, "measurement output (HSIC)")->required();
  s->add_option("--mask-out", sim.mask_out, "shifted-mask output (default: <out>.mask.hsic)");

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "Reconstruct a cube with the HQS recurrence");
  r->add_option("--measurement", rec.measurement, "measurement (HSIC, one band)")->required();
  r->add_option("--mask", rec.mask, "aperture [H, W] or shifted mask [H, W', N] (HSIC)")->required();
  r->add_option("--step", rec.step, "dispersion shift per band")->capture_default_str();
  r->add_option("--bands", rec.bands, "band count (inferred from widths by default)");
  r->add_option("--stages", rec.stages, "number of stages K")->capture_default_str();
  r->add_option("--denoiser", rec.denoiser, "tv | identity | lnlt")
      ->check(CLI::IsMember({"tv", "identity", "lnlt"}))
      ->capture_default_str();
  r->add_option("--params", rec.params, "parameter store (DPRM)");
  r->add_option("--use-den", rec.use_den, "estimate (Phi, mu, eta) per stage")->capture_default_str();
  r->add_option("--mu1", rec.mu1, "first-stage mu")->capture_default_str();
  r->add_option("--mu-growth", rec.mu_growth, "per-stage mu factor")->capture_default_str();
  r->add_option("--lambda", rec.lambda, "prior weight; eta = mu / lambda")->capture_default_str();
  r->add_option("--tv-iters", rec.tv_iters, "TV inner iterations")->capture_default_str();
  r->add_option("--truth", rec.truth, "ground truth (HSIC) for metrics");
  r->add_option("--out", rec.out, "reconstruction output (HSIC)")->required();
  r->add_option("--trace", rec.trace, "per-stage trace CSV");
  r->add_option("--metrics", rec.metrics, "metrics CSV (needs --truth)");

  SelftestArgs st;
  auto* t = app.add_subcommand("selftest", "Run the oracle checks");
  t->add_option("--level", st.level, "quick | full")->check(CLI::IsMember({"quick", "full"}))->capture_default_str();
  t->add_option("--seed", st.seed, "fixture seed")->capture_default_str();
  t->add_flag("--tamper-conv", st.tamper_conv, "flip a conv kernel sign in the fixtures (must fail)");

  TrainArgs tr;
  auto* n = app.add_subcommand("train", "Overfit the learned recurrence to one patch");
  n->add_option("--truth", tr.truth, "training patch (HSIC)")->required();
  auto* tmask = n->add_option("--mask", tr.mask, "coded aperture (HSIC, one band)");
  n->add_option("--mask-seed", tr.mask_seed, "seed of a random binary aperture")->excludes(tmask);
  n->add_option("--step", tr.step, "dispersion shift per band")->capture_default_str();
  n->add_option("--stages", tr.stages, "number of stages K")->capture_default_str();
  n->add_option("--steps", tr.steps, "Adam steps")->capture_default_str();
  n->add_option("--lr", tr.lr, "peak learning rate")->capture_default_str();
  n->add_option("--warmup", tr.warmup, "linear warm-up steps")->capture_default_str();
  n->add_option("--seed", tr.seed, "initialization seed")->capture_default_str();
  n->add_option("--noise", tr.noise, "shot | none")->check(CLI::IsMember({"shot", "none"}))->capture_default_str();
  n->add_option("--bits", tr.bits, "shot-noise bit depth")->capture_default_str();
  n->add_option("--channels", tr.channels, "LNLT base width C")->capture_default_str();
  n->add_option("--blocks", tr.blocks, "LNLBs per level")->capture_default_str();
  n->add_option("--window-size", tr.window_size, "local window M")->capture_default_str();
  n->add_option("--window-count", tr.window_count, "non-local grid N")->capture_default_str();
  n->add_option("--den-blocks", tr.den_blocks, "DLCBs in the estimator")->capture_default_str();
  n->add_option("--out", tr.out, "parameter store output (DPRM)")->required();
  n->add_option("--curve", tr.curve, "loss curve CSV");

  PhantomArgs ph;
  auto* p = app.add_subcommand("phantom", "Write a seeded synthetic scene");
  p->add_option("--height", ph.height)->capture_default_str();
  p->add_option("--width", ph.width)->capture_default_str();
  p->add_option("--bands", ph.bands)->capture_default_str();
  p->add_option("--seed", ph.seed)->capture_default_str();
  p->add_option("--out", ph.out, "cube output (HSIC)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFormat;
  }

  try {
    if (*s) return run_simulate(sim);
    if (*r) return run_reconstruct(rec);
    if (*t) return run_selftest_cmd(st);
    if (*n) return run_train(tr);
    if (*p) return run_phantom(ph);
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "diverged at step %d: %s\n", e.step(), e.what());
    return kDiverged;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kDiverged;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kFormat;
  } catch (const MissingDependency& e) {
    std::fprintf(stderr, "missing dependency: %s\n", e.what());
    return kMissing;
  } catch (const Error& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kShape;
  }
  return kOk;
}
