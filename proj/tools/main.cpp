#include <iostream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

template <typename T>
void optional_option(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

void add_overrides(CLI::App* app, hsnerf::cli::TrainOverrides& o) {
  optional_option(app, "--steps", o.steps, "Total training steps");
  optional_option(app, "--rays", o.rays, "Rays per step");
  optional_option(app, "--wavelengths-per-step", o.wavelengths_per_step, "Wavelengths sampled per step (0 = all)");
  optional_option(app, "--keep", o.keep_wavelengths, "Train on this many evenly spaced wavelengths");
  optional_option(app, "--radiance", o.radiance, "Radiance variant: C, C1, C2");
  optional_option(app, "--density", o.density, "Density variant: sigma, sigma0, sigma1, sigma2");
  optional_option(app, "--proposal", o.proposal, "Proposal variant: P0, Plambda");
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reallocates the same large tensors every step; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  namespace cli = hsnerf::cli;
  CLI::App app{"Hyperspectral neural radiance fields"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t v) { seed = v, seed_set = true; }, "Global random seed");
  app.add_option("--threads", threads, "Maximum worker threads")->check(CLI::PositiveNumber);

  cli::SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic hyperspectral dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--scene", synth.scene, "Scene description (JSON)");
  s->add_flag("--empty", synth.empty_scene, "Render an empty scene");
  s->add_option("--width", synth.options.width, "Image width");
  s->add_option("--height", synth.options.height, "Image height");
  s->add_option("--channels", synth.options.channels, "Number of wavelength channels");
  s->add_option("--cameras", synth.options.ring.count, "Cameras on the ring");
  s->add_option("--lambda-min", synth.options.lambda_min, "First channel (nm)");
  s->add_option("--lambda-max", synth.options.lambda_max, "Last channel (nm)");
  s->add_option("--march-steps", synth.options.march_steps, "Quadrature steps per ray");

  cli::TrainArgs train;
  bool no_resume = false;
  auto* t = app.add_subcommand("train", "Train a field on a dataset");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--config", train.config, "Config file (JSON)");
  t->add_flag("--no-resume", no_resume, "Start over even if a checkpoint exists");
  t->add_flag("--quiet", train.quiet, "Suppress progress output");
  add_overrides(t, train.overrides);

  cli::RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a camera of the dataset from a checkpoint");
  r->add_option("--checkpoint", render.checkpoint, "Checkpoint file")->required();
  r->add_option("--data", render.data, "Dataset directory (default: the training dataset)");
  r->add_option("--frame", render.frame, "Camera index in the pose file");
  r->add_option("--wavelengths", render.wavelengths, "\"all\" or comma-separated wavelengths in nm");
  r->add_option("--out", render.out, "Output cube (HSC1)")->required();
  r->add_option("--rgb", render.rgb, "Optional pseudo-RGB raster (PPM)");
  r->add_option("--r-nm", render.r_nm, "Red band (nm)");
  r->add_option("--g-nm", render.g_nm, "Green band (nm)");
  r->add_option("--b-nm", render.b_nm, "Blue band (nm)");

  cli::EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on its train/eval split");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Dataset directory (default: the training dataset)");
  e->add_option("--out", eval.out, "Output directory for metrics CSVs")->required();

  cli::AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Train and score the six architecture rows");
  a->add_option("--data", ablate.data, "Dataset directory")->required();
  a->add_option("--out", ablate.out, "Output directory")->required();
  a->add_option("--config", ablate.config, "Base config file (JSON)");
  a->add_flag("--quiet", ablate.quiet, "Suppress progress output");
  add_overrides(a, ablate.overrides);

  auto* sensor = app.add_subcommand("sensor", "Fit or apply an RGB sensor response");
  sensor->require_subcommand(1);
  cli::SensorFitArgs fit;
  auto* sf = sensor->add_subcommand("fit", "Fit a linear spectral response from an aligned cube/RGB pair");
  sf->add_option("--cube", fit.cube, "Hyperspectral cube (HSC1)")->required();
  sf->add_option("--rgb", fit.rgb, "Aligned RGB image (PPM)")->required();
  sf->add_option("--mask", fit.mask, "Background mask (PGM); masked pixels are excluded");
  sf->add_option("--out", fit.out, "Response CSV")->required();
  cli::SensorSimulateArgs sim;
  auto* ss = sensor->add_subcommand("simulate", "Apply a spectral response to a cube");
  ss->add_option("--cube", sim.cube, "Hyperspectral cube (HSC1)")->required();
  ss->add_option("--response", sim.response, "Response CSV")->required();
  ss->add_option("--out", sim.out, "Output RGB raster (PPM)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) {
      synth.seed = seed;
      cli::cmd_synth(synth);
    } else if (t->parsed()) {
      train.resume = !no_resume;
      if (seed_set) train.overrides.seed = seed;
      cli::cmd_train(train);
    } else if (r->parsed()) {
      cli::cmd_render(render);
    } else if (e->parsed()) {
      const auto q = cli::cmd_eval(eval);
      std::cout << "train_set psnr " << q.train_set->mean_psnr << " ssim " << q.train_set->mean_ssim << '\n';
      std::cout << "unseen_images psnr " << q.unseen_images->mean_psnr << " ssim " << q.unseen_images->mean_ssim << '\n';
      if (q.unseen_wavelengths) {
        std::cout << "unseen_wavelengths psnr " << q.unseen_wavelengths->mean_psnr << '\n';
        std::cout << "both_unseen psnr " << q.both_unseen->mean_psnr << '\n';
      }
    } else if (a->parsed()) {
      if (seed_set) ablate.overrides.seed = seed;
      for (const auto& row : cli::cmd_ablate(ablate))
        std::cout << row.row.name() << "  train " << row.train_psnr << " dB  eval " << row.eval_psnr << " dB\n";
    } else if (sf->parsed()) {
      std::cout << "rms residual " << cli::cmd_sensor_fit(fit) << '\n';
    } else if (ss->parsed()) {
      cli::cmd_sensor_simulate(sim);
    }
  } catch (...) {
    return cli::exit_code_for_current_exception();
  }
  return 0;
}
