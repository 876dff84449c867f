#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "hsnerf/error.hpp"
#include "hsnerf/metrics.hpp"
#include "hsnerf/spectools.hpp"

namespace hsnerf::cli {

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

Dataset dataset_for(const std::optional<fs::path>& data, const nlohmann::json& header) {
  if (data) return load_dataset(*data);
  if (!header.contains("dataset")) throw ConfigError("no dataset given and none recorded in the checkpoint");
  return load_dataset(header.at("dataset").get<std::string>());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Per-wavelength means over the images of a report.
SpectrumMetrics per_wavelength(const EvalReport& r) {
  SpectrumMetrics m;
  if (r.images.empty()) return m;
  m.wavelengths = r.images.front().wavelengths;
  const std::size_t L = m.wavelengths.size();
  m.psnr.assign(L, 0.0);
  m.ssim.assign(L, 0.0);
  for (const auto& img : r.images)
    for (std::size_t l = 0; l < L; ++l) {
      m.psnr[l] += img.psnr[l] / static_cast<double>(r.images.size());
      m.ssim[l] += img.ssim[l] / static_cast<double>(r.images.size());
    }
  m.mean_psnr = r.mean_psnr;
  m.mean_ssim = r.mean_ssim;
  return m;
}

}  // namespace

// ------------------------------------------------------------------- synth

void cmd_synth(const SynthArgs& args) {
  SyntheticScene scene = three_sphere_scene();
  if (args.scene) scene = read_json(*args.scene).get<SyntheticScene>();
  if (args.empty_scene) scene.spheres.clear();
  const SyntheticDataset ds = generate_synthetic_dataset(scene, args.options);
  write_synthetic_dataset(ds, scene, args.out);
  nlohmann::json meta{{"seed", args.seed},
                      {"width", args.options.width},
                      {"height", args.options.height},
                      {"channels", args.options.channels},
                      {"cameras", args.options.ring.count},
                      {"march_steps", args.options.march_steps}};
  write_json(meta, args.out / "synth.json");
}

// ------------------------------------------------------------------- train

TrainerOptions load_options(const std::optional<fs::path>& config, const TrainOverrides& o) {
  TrainerOptions opts;
  if (config) opts = read_json(*config).get<TrainerOptions>();
  if (o.steps) opts.train.total_steps = *o.steps;
  if (o.rays) opts.train.rays_per_step = *o.rays;
  if (o.wavelengths_per_step) opts.train.wavelengths_per_step = *o.wavelengths_per_step;
  if (o.keep_wavelengths) opts.split.keep_wavelengths = *o.keep_wavelengths;
  if (o.seed) opts.train.seed = *o.seed;
  if (o.radiance) opts.field.radiance = parse_radiance_variant(*o.radiance);
  if (o.density) opts.field.density = parse_density_variant(*o.density);
  if (o.proposal) opts.field.proposal = parse_proposal_variant(*o.proposal);
  opts.train.validate();
  opts.sampler.validate();
  return opts;
}

void cmd_train(const TrainArgs& args) {
  const Dataset data = load_dataset(args.data);
  Trainer trainer(data, load_options(args.config, args.overrides));
  const int total = trainer.options().train.total_steps;
  const int every = std::max(1, total / 20);
  trainer.run(args.out, args.resume, [&](const StepLosses& l) {
    if (!args.quiet && ((l.step + 1) % every == 0 || l.step + 1 == total))
      std::cerr << "step " << l.step + 1 << "/" << total << "  loss " << l.total << "  recon " << l.recon << '\n';
  });
}

// ------------------------------------------------------------------ render

void cmd_render(const RenderArgs& args) {
  const LoadedModel model = load_model(args.checkpoint);
  const Dataset data = dataset_for(args.data, model.header);
  if (args.frame >= data.size()) throw ConfigError("frame index " + std::to_string(args.frame) + " out of range");
  std::vector<double> lambdas, bg;
  if (args.wavelengths == "all") {
    lambdas = data.wavelengths;
    bg = data.background;
  } else {
    std::stringstream ss(args.wavelengths);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double w = 0.0;
      try {
        w = std::stod(item);
      } catch (const std::exception&) {
        throw ConfigError("bad wavelength '" + item + "'");
      }
      lambdas.push_back(w);
      // Background of the nearest recorded channel.
      bg.push_back(data.background[nearest_channel(data.wavelengths, w)]);
    }
    if (lambdas.empty()) throw ConfigError("no wavelengths requested");
    for (std::size_t i = 1; i < lambdas.size(); ++i)
      if (!(lambdas[i] > lambdas[i - 1])) throw ConfigError("wavelengths must be strictly increasing");
  }
  if (!model.field->interpolates_wavelength()) model.field->channel_indices(lambdas);
  const auto& cam = data.poses.frames[args.frame];
  const Tensor img = render_image(*model.field, model.options.sampler, cam, data.box, lambdas, bg);
  HyperCube cube(cam.height, cam.width, lambdas);
  for (std::size_t i = 0; i < cube.data.size(); ++i) cube.data[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  write_cube(cube, args.out);
  if (args.rgb) write_rgb(pseudo_rgb_fixed(cube, args.r_nm, args.g_nm, args.b_nm), cube.height, cube.width, *args.rgb);
}

// -------------------------------------------------------------------- eval

QuadrantReport cmd_eval(const EvalArgs& args) {
  const LoadedModel model = load_model(args.checkpoint);
  if (model.frames.train.empty() || model.frames.eval.empty())
    throw DataError("checkpoint split metadata is missing or empty");
  const Dataset data = dataset_for(args.data, model.header);
  const QuadrantReport q = superres_report(*model.field, model.options.sampler, data, model.frames, model.wavelengths);
  fs::create_directories(args.out);
  std::ofstream csv(args.out / "summary.csv");
  if (!csv) throw DataError("cannot write under " + args.out.string());
  csv << "quadrant,images,wavelengths,psnr_db,ssim\n";
  auto row = [&](const char* name, const std::optional<EvalReport>& r, std::size_t n_img, std::size_t n_lambda) {
    if (!r) {
      csv << name << ',' << n_img << ",0,N/A,N/A\n";
      return;
    }
    csv << name << ',' << n_img << ',' << n_lambda << ',' << fmt("%.6f", r->mean_psnr) << ','
        << fmt("%.6f", r->mean_ssim) << '\n';
    write_metrics_csv(per_wavelength(*r), args.out / (std::string(name) + ".csv"));
  };
  row("train_set", q.train_set, model.frames.train.size(), model.wavelengths.train.size());
  row("unseen_images", q.unseen_images, model.frames.eval.size(), model.wavelengths.train.size());
  row("unseen_wavelengths", q.unseen_wavelengths, model.frames.train.size(), model.wavelengths.held_out.size());
  row("both_unseen", q.both_unseen, model.frames.eval.size(), model.wavelengths.held_out.size());

  std::ofstream images(args.out / "images.csv");
  images << "quadrant,frame,psnr_db,ssim\n";
  auto list = [&](const char* name, const std::optional<EvalReport>& r) {
    if (!r) return;
    for (const auto& m : r->images)
      images << name << ',' << m.frame << ',' << fmt("%.6f", m.mean_psnr) << ',' << fmt("%.6f", m.mean_ssim) << '\n';
  };
  list("train_set", q.train_set);
  list("unseen_images", q.unseen_images);
  list("unseen_wavelengths", q.unseen_wavelengths);
  list("both_unseen", q.both_unseen);
  return q;
}

// ------------------------------------------------------------------ ablate

std::string AblationRow::name() const { return to_string(radiance) + "_" + to_string(density) + "_" + to_string(proposal); }

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {RadianceVariant::C1, DensityVariant::Sigma0, ProposalVariant::P0},
      {RadianceVariant::C1, DensityVariant::Sigma1, ProposalVariant::P0},
      {RadianceVariant::C, DensityVariant::Sigma0, ProposalVariant::P0},
      {RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0},
      {RadianceVariant::C2, DensityVariant::Sigma2, ProposalVariant::P0},
      {RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda},
  };
  return rows;
}

std::vector<AblationResult> cmd_ablate(const AblateArgs& args) {
  const Dataset data = load_dataset(args.data);
  const TrainerOptions base = load_options(args.config, args.overrides);
  fs::create_directories(args.out);
  std::vector<AblationResult> results;
  const auto& rows = ablation_rows();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AblationRow& row = rows[i];
    const fs::path dir = args.out / ("row" + std::to_string(i + 1) + "_" + row.name());
    const fs::path done = dir / "row_metrics.json";
    AblationResult res{row};
    if (fs::exists(done)) {
      const auto j = read_json(done);
      res.train_psnr = j.at("train_psnr").get<double>();
      res.train_ssim = j.at("train_ssim").get<double>();
      res.eval_psnr = j.at("eval_psnr").get<double>();
      res.eval_ssim = j.at("eval_ssim").get<double>();
      res.steps = j.at("steps").get<int>();
      results.push_back(res);
      continue;
    }
    TrainerOptions opts = base;
    opts.field.radiance = row.radiance;
    opts.field.density = row.density;
    opts.field.proposal = row.proposal;
    opts.train.seed = derive_seed(base.train.seed, {0x61626C61ULL, i});
    Trainer trainer(data, opts);
    if (!args.quiet) std::cerr << "ablation row " << i + 1 << ": " << row.name() << '\n';
    trainer.run(dir, true);
    const auto train = evaluate(trainer.field(), opts.sampler, data, trainer.frames().train, trainer.wavelengths().train);
    const auto eval = evaluate(trainer.field(), opts.sampler, data, trainer.frames().eval, trainer.wavelengths().train);
    res.train_psnr = train.mean_psnr;
    res.train_ssim = train.mean_ssim;
    res.eval_psnr = eval.mean_psnr;
    res.eval_ssim = eval.mean_ssim;
    res.steps = static_cast<int>(trainer.step());
    write_json({{"row", i + 1},
                {"architecture", row.name()},
                {"train_psnr", res.train_psnr},
                {"train_ssim", res.train_ssim},
                {"eval_psnr", res.eval_psnr},
                {"eval_ssim", res.eval_ssim},
                {"steps", res.steps}},
               done);
    results.push_back(res);
  }
  std::ofstream csv(args.out / "ablation.csv");
  if (!csv) throw DataError("cannot write ablation table under " + args.out.string());
  csv << "row,radiance,density,proposal,train_psnr,train_ssim,eval_psnr,eval_ssim,steps\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    csv << i + 1 << ',' << to_string(r.row.radiance) << ',' << to_string(r.row.density) << ','
        << to_string(r.row.proposal) << ',' << fmt("%.6f", r.train_psnr) << ',' << fmt("%.6f", r.train_ssim) << ','
        << fmt("%.6f", r.eval_psnr) << ',' << fmt("%.6f", r.eval_ssim) << ',' << r.steps << '\n';
  }
  return results;
}

// ------------------------------------------------------------------ sensor

double cmd_sensor_fit(const SensorFitArgs& args) {
  const HyperCube cube = read_cube(args.cube);
  int h = 0, w = 0;
  const std::vector<double> rgb = read_rgb(args.rgb, h, w);
  if (h != cube.height || w != cube.width)
    throw DataError("rgb image is " + std::to_string(h) + "x" + std::to_string(w) + " but the cube is " +
                    std::to_string(cube.height) + "x" + std::to_string(cube.width));
  std::vector<std::uint8_t> use;
  if (args.mask) {
    const Mask m = read_mask(*args.mask);
    if (m.height != h || m.width != w) throw DataError("mask size does not match the cube");
    use.resize(m.size());
    for (std::size_t p = 0; p < m.size(); ++p) use[p] = m.background(p) ? 0 : 1;
  }
  const std::vector<double> hs(cube.data.begin(), cube.data.end());
  const SpectralResponse r = fit_linear_map(hs, rgb, cube.channels(), cube.wavelengths, use);
  write_response_csv(r, args.out);
  const auto sim = simulate_sensor_linear(cube, r);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    if (!use.empty() && !use[p]) continue;
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = sim[p * 3 + k] - rgb[p * 3 + k];
      s += d * d;
      ++n;
    }
  }
  return std::sqrt(s / static_cast<double>(n));
}

void cmd_sensor_simulate(const SensorSimulateArgs& args) {
  const HyperCube cube = read_cube(args.cube);
  const SpectralResponse r = read_response_csv(args.response);
  write_rgb(simulate_sensor(cube, r), cube.height, cube.width, args.out);
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (...) {
    std::cerr << "unknown error\n";
    return 1;
  }
}

}  // namespace hsnerf::cli
