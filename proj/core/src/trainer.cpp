#include "hsnerf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "hsnerf/checkpoint.hpp"
#include "hsnerf/compositing.hpp"
#include "hsnerf/error.hpp"
#include "hsnerf/metrics.hpp"

namespace hsnerf {

namespace {

enum Stream : std::uint64_t { kStreamSplit = 1, kStreamCache = 2, kStreamRays = 3, kStreamSamples = 4 };

int int_or_all(const nlohmann::json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_string()) {
    if (v.get<std::string>() != "all") throw ConfigError(std::string(key) + " must be an integer or \"all\"");
    return 0;
  }
  return v.get<int>();
}

nlohmann::json all_or_int(int v) { return v == 0 ? nlohmann::json("all") : nlohmann::json(v); }

}  // namespace

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (rays_per_step < 1) throw ConfigError("rays_per_step must be positive");
  if (wavelengths_per_step < 0) throw ConfigError("wavelengths_per_step must be positive or \"all\"");
  if (cache_images < 0) throw ConfigError("cache_images must be positive or \"all\"");
  if (cache_refresh_steps < 1) throw ConfigError("cache_refresh_steps must be positive");
  if (!(base_lr > 0.0) || !(final_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (decay_steps < 1) throw ConfigError("decay_steps must be positive");
  if (!(recon_weight >= 0.0) || !(interlevel_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"total_steps", c.total_steps},
                     {"rays_per_step", c.rays_per_step},
                     {"wavelengths_per_step", all_or_int(c.wavelengths_per_step)},
                     {"cache_images", all_or_int(c.cache_images)},
                     {"cache_refresh_steps", c.cache_refresh_steps},
                     {"base_lr", c.base_lr},
                     {"final_lr", c.final_lr},
                     {"decay_steps", c.decay_steps},
                     {"seed", c.seed},
                     {"recon_weight", c.recon_weight},
                     {"interlevel_weight", c.interlevel_weight},
                     {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.total_steps = j.value("total_steps", c.total_steps);
    c.rays_per_step = j.value("rays_per_step", c.rays_per_step);
    c.wavelengths_per_step = int_or_all(j, "wavelengths_per_step", c.wavelengths_per_step);
    c.cache_images = int_or_all(j, "cache_images", c.cache_images);
    c.cache_refresh_steps = j.value("cache_refresh_steps", c.cache_refresh_steps);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.final_lr = j.value("final_lr", c.final_lr);
    c.decay_steps = j.value("decay_steps", c.decay_steps);
    c.seed = j.value("seed", c.seed);
    c.recon_weight = j.value("recon_weight", c.recon_weight);
    c.interlevel_weight = j.value("interlevel_weight", c.interlevel_weight);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = nlohmann::json{{"train_fraction", s.train_fraction},
                     {"keep_wavelengths", s.keep_wavelengths},
                     {"wavelength_indices", s.wavelength_indices}};
  if (s.eval_count) j["eval_count"] = *s.eval_count;
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  try {
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    if (j.contains("eval_count") && !j.at("eval_count").is_null()) s.eval_count = j.at("eval_count").get<std::size_t>();
    s.keep_wavelengths = j.value("keep_wavelengths", s.keep_wavelengths);
    s.wavelength_indices = j.value("wavelength_indices", s.wavelength_indices);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("split spec: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const TrainerOptions& o) {
  j = nlohmann::json{{"field", o.field}, {"sampler", o.sampler}, {"train", o.train}, {"split", o.split}};
}

void from_json(const nlohmann::json& j, TrainerOptions& o) {
  try {
    if (j.contains("field")) o.field = j.at("field").get<FieldConfig>();
    if (j.contains("sampler")) o.sampler = j.at("sampler").get<SamplerConfig>();
    if (j.contains("train")) o.train = j.at("train").get<TrainConfig>();
    if (j.contains("split")) o.split = j.at("split").get<SplitSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// ------------------------------------------------------------------ splits

FrameSplit split_dataset(std::size_t n, const SplitSpec& spec, std::uint64_t seed) {
  if (n < 2) throw DataError("split_dataset needs at least two frames");
  std::size_t n_eval = 0;
  if (spec.eval_count) {
    n_eval = *spec.eval_count;
  } else {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
      throw ConfigError("train_fraction must lie in (0, 1)");
    n_eval = n - static_cast<std::size_t>(std::lround(spec.train_fraction * static_cast<double>(n)));
  }
  n_eval = std::clamp<std::size_t>(n_eval, 1, n - 1);
  Rng rng(derive_seed(seed, {kStreamSplit}));
  const double phase = rng.uniform();
  std::vector<bool> is_eval(n, false);
  for (std::size_t j = 0; j < n_eval; ++j) {
    const auto idx = static_cast<std::size_t>((static_cast<double>(j) + phase) * static_cast<double>(n) /
                                              static_cast<double>(n_eval));
    is_eval[std::min(idx, n - 1)] = true;
  }
  FrameSplit s;
  for (std::size_t i = 0; i < n; ++i) (is_eval[i] ? s.eval : s.train).push_back(i);
  return s;
}

WavelengthSplit split_wavelengths(std::size_t n_channels, const SplitSpec& spec) {
  if (!spec.wavelength_indices.empty()) {
    std::vector<std::size_t> idx = spec.wavelength_indices;
    std::sort(idx.begin(), idx.end());
    if (std::adjacent_find(idx.begin(), idx.end()) != idx.end() || idx.back() >= n_channels)
      throw ConfigError("wavelength_indices must be distinct channel indices");
    WavelengthSplit s;
    s.train = idx;
    for (std::size_t c = 0; c < n_channels; ++c)
      if (!std::binary_search(idx.begin(), idx.end(), c)) s.held_out.push_back(c);
    return s;
  }
  return superres_split(n_channels, spec.keep_wavelengths == 0 ? n_channels : spec.keep_wavelengths);
}

std::vector<std::size_t> sample_wavelengths(std::size_t n, std::size_t k, Rng& rng) {
  if (k < 1 || k > n) throw ConfigError("sample_wavelengths: need 1 <= k <= N");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  if (k == n) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> refresh_image_cache(std::size_t n_train, std::size_t cache_images, std::int64_t step,
                                             int refresh_steps, std::uint64_t seed) {
  if (n_train == 0) throw DataError("no training frames");
  if (refresh_steps < 1) throw ConfigError("cache_refresh_steps must be positive");
  if (cache_images > n_train) throw ConfigError("cache_images exceeds the number of training frames");
  if (cache_images == 0 || cache_images == n_train) {
    std::vector<std::size_t> all(n_train);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  Rng rng(derive_seed(seed, {kStreamCache, static_cast<std::uint64_t>(step / refresh_steps)}));
  return sample_wavelengths(n_train, cache_images, rng);
}

// -------------------------------------------------------------- evaluation

EvalReport evaluate(const Field& field, const SamplerConfig& sampler, const Dataset& data,
                    std::span<const std::size_t> frames, std::span<const std::size_t> channels) {
  if (channels.empty()) throw ConfigError("evaluate: no wavelengths requested");
  std::vector<double> lambdas, bg;
  for (std::size_t c : channels) {
    if (c >= data.channels()) throw DataError("evaluate: channel index out of range");
    lambdas.push_back(data.wavelengths[c]);
    bg.push_back(data.background[c]);
  }
  if (!field.interpolates_wavelength()) field.channel_indices(lambdas);
  EvalReport report;
  for (std::size_t f : frames) {
    if (f >= data.size()) throw DataError("evaluate: frame index out of range");
    const auto& cam = data.poses.frames[f];
    const auto& cube = data.cubes[f];
    const Tensor img = render_image(field, sampler, cam, data.box, lambdas, bg);
    ImageMetrics m;
    m.frame = f;
    m.wavelengths = lambdas;
    const std::size_t L = lambdas.size();
    std::vector<double> pred(cube.pixels());
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t p = 0; p < pred.size(); ++p) pred[p] = img[p * L + l];
      const auto target = channel_plane(cube, channels[l]);
      m.psnr.push_back(psnr(pred, target));
      m.ssim.push_back(cube.height >= 11 && cube.width >= 11 ? ssim(pred, target, cube.height, cube.width)
                                                             : std::nan(""));
      m.mean_psnr += m.psnr.back();
      m.mean_ssim += m.ssim.back();
    }
    m.mean_psnr /= static_cast<double>(L);
    m.mean_ssim /= static_cast<double>(L);
    report.mean_psnr += m.mean_psnr;
    report.mean_ssim += m.mean_ssim;
    report.images.push_back(std::move(m));
  }
  if (!report.images.empty()) {
    report.mean_psnr /= static_cast<double>(report.images.size());
    report.mean_ssim /= static_cast<double>(report.images.size());
  }
  return report;
}

QuadrantReport superres_report(const Field& field, const SamplerConfig& sampler, const Dataset& data,
                               const FrameSplit& frames, const WavelengthSplit& wavelengths) {
  if (!wavelengths.held_out.empty() && !field.interpolates_wavelength())
    throw WavelengthError("discrete variant (" + to_string(field.config().radiance) + ", " +
                          to_string(field.config().density) + ") cannot interpolate to held-out wavelengths");
  QuadrantReport q;
  q.train_set = evaluate(field, sampler, data, frames.train, wavelengths.train);
  q.unseen_images = evaluate(field, sampler, data, frames.eval, wavelengths.train);
  if (!wavelengths.held_out.empty()) {
    q.unseen_wavelengths = evaluate(field, sampler, data, frames.train, wavelengths.held_out);
    q.both_unseen = evaluate(field, sampler, data, frames.eval, wavelengths.held_out);
  }
  return q;
}

// ----------------------------------------------------------------- trainer

FieldConfig resolve_field_config(FieldConfig config, const Dataset& data, const WavelengthSplit& wavelengths) {
  config.channel_wavelengths.clear();
  for (std::size_t c : wavelengths.train) config.channel_wavelengths.push_back(data.wavelengths[c]);
  config.lambda_min = data.wavelengths.front();
  config.lambda_max = data.wavelengths.back();
  if (!(config.lambda_max > config.lambda_min)) {
    config.lambda_min -= 1.0;
    config.lambda_max += 1.0;
  }
  return config;
}

Trainer::Trainer(const Dataset& data, TrainerOptions options) : data_(data), options_(std::move(options)) {
  options_.train.validate();
  options_.sampler.validate();
  if (data_.size() < 2) throw DataError("training needs at least two frames");
  frames_ = split_dataset(data_.size(), options_.split, options_.train.seed);
  wavelengths_ = split_wavelengths(data_.channels(), options_.split);
  for (std::size_t c : wavelengths_.train) train_lambdas_.push_back(data_.wavelengths[c]);
  if (options_.train.wavelengths_per_step > static_cast<int>(wavelengths_.train.size()))
    throw ConfigError("wavelengths_per_step exceeds the number of training wavelengths");
  if (options_.train.cache_images > static_cast<int>(frames_.train.size()))
    throw ConfigError("cache_images exceeds the number of training frames");
  options_.field = resolve_field_config(options_.field, data_, wavelengths_);
  if (options_.sampler.proposal_samples.size() != static_cast<std::size_t>(options_.field.proposal_networks))
    throw ConfigError("sampler proposal_samples must have one entry per proposal network");
  field_ = build_field(options_.field, options_.train.seed);
  adam_ = AdamState::for_params(field_->params(), options_.train.base_lr);
}

StepLosses Trainer::train_step() {
  const auto& tc = options_.train;
  return train_step_with_lr(lr_schedule(step_, tc.base_lr, tc.final_lr, tc.decay_steps));
}

StepLosses Trainer::train_step_with_lr(double lr) {
  const auto& tc = options_.train;
  const std::int64_t s = step_;
  const auto active = refresh_image_cache(frames_.train.size(), static_cast<std::size_t>(tc.cache_images), s,
                                          tc.cache_refresh_steps, tc.seed);
  Rng rng(derive_seed(tc.seed, {kStreamRays, static_cast<std::uint64_t>(s)}));

  const auto R = static_cast<std::size_t>(tc.rays_per_step);
  const std::size_t n_lambda = tc.wavelengths_per_step == 0 ? wavelengths_.train.size()
                                                            : static_cast<std::size_t>(tc.wavelengths_per_step);
  RayBatch rays;
  std::vector<std::size_t> ray_frame(R);
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t f = frames_.train[active[rng.below(active.size())]];
    const auto& cam = data_.poses.frames[f];
    const std::size_t p = rng.below(cam.pixel_count());
    RayBatch one = generate_rays(cam, std::span<const std::size_t>(&p, 1));
    rays.origins.push_back(one.origins[0]);
    rays.directions.push_back(one.directions[0]);
    rays.pixels.push_back(p);
    ray_frame[r] = f;
  }
  rays.near.assign(R, 0.0);
  rays.far.assign(R, 0.0);
  rays.hit.assign(R, false);
  clip_rays(rays, data_.box);

  const auto picked = sample_wavelengths(wavelengths_.train.size(), n_lambda, rng);
  std::vector<double> lambdas, bg;
  std::vector<std::size_t> channels;
  for (std::size_t i : picked) {
    channels.push_back(wavelengths_.train[i]);
    lambdas.push_back(data_.wavelengths[channels.back()]);
    bg.push_back(data_.background[channels.back()]);
  }
  const std::size_t L = channels.size();
  Tensor target({R, L});
  for (std::size_t r = 0; r < R; ++r) {
    const auto spec = data_.cubes[ray_frame[r]].spectrum(rays.pixels[r]);
    for (std::size_t l = 0; l < L; ++l) target.at(r, l) = spec[channels[l]];
  }

  Rng sample_rng(derive_seed(tc.seed, {kStreamSamples, static_cast<std::uint64_t>(s)}));
  Tape tape;
  RenderRequest req{rays, data_.box, lambdas, bg, true, &sample_rng, true};
  RenderResult out = render_rays(tape, *field_, options_.sampler, req);
  Var recon = ad::recon_loss(out.pixel, tape.constant(std::move(target)));
  Var loss = ad::add(ad::scale(recon, tc.recon_weight), ad::scale(out.interlevel, tc.interlevel_weight));

  StepLosses losses;
  losses.step = s;
  losses.lr = lr;
  losses.recon = recon.value()[0];
  losses.interlevel = out.interlevel.value()[0];
  losses.total = loss.value()[0];
  if (!std::isfinite(losses.total))
    throw NumericalError("non-finite loss at step " + std::to_string(s) + " (recon " + std::to_string(losses.recon) +
                         ", interlevel " + std::to_string(losses.interlevel) + ", lr " + std::to_string(lr) + ")");

  field_->params().zero_grad();
  if (tape.requires_grad(loss.id)) tape.backward(loss);
  adam_step(field_->params(), adam_, lr);
  for (const auto& p : field_->params())
    for (double v : p->value.data())
      if (!std::isfinite(v)) throw NumericalError("parameter " + p->name + " became non-finite at step " + std::to_string(s));
  ++step_;
  return losses;
}

nlohmann::json Trainer::header() const {
  nlohmann::json h;
  h["format"] = "hsnerf-model";
  h["options"] = options_;
  h["step"] = step_;
  h["dataset"] = data_.root.string();
  h["channel_wavelengths"] = data_.wavelengths;
  h["frames"] = {{"train", frames_.train}, {"eval", frames_.eval}};
  h["wavelengths"] = {{"train", wavelengths_.train}, {"held_out", wavelengths_.held_out}};
  return h;
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, header(), field_->params(), adam_);
}

namespace {
nlohmann::json comparable(nlohmann::json options) {
  options["train"].erase("total_steps");
  options["train"].erase("checkpoint_every");
  return options;
}
}  // namespace

void Trainer::resume(const std::filesystem::path& path) {
  CheckpointData ckpt = load_checkpoint(path);
  if (!ckpt.header.contains("options") || !ckpt.header.contains("step"))
    throw DataError("checkpoint " + path.string() + " has no training metadata");
  if (comparable(ckpt.header.at("options")) != comparable(nlohmann::json(options_)))
    throw ConfigError("checkpoint " + path.string() + " was written with a different configuration");
  restore_parameters(ckpt, field_->params());
  if (ckpt.adam.first_moment.size() != field_->params().size())
    throw DataError("checkpoint optimizer state does not match the parameters");
  adam_ = std::move(ckpt.adam);
  step_ = ckpt.header.at("step").get<std::int64_t>();
}

void Trainer::run(const std::filesystem::path& out_dir, bool resume_run, const Progress& progress) {
  std::filesystem::create_directories(out_dir);
  const auto ckpt_path = out_dir / "checkpoint.bin";
  const auto csv_path = out_dir / "loss.csv";
  if (resume_run && std::filesystem::exists(ckpt_path)) resume(ckpt_path);

  {
    std::ofstream cfg(out_dir / "config.json");
    if (!cfg) throw DataError("cannot write under " + out_dir.string());
    cfg << nlohmann::json(options_).dump(2) << '\n';
  }

  // Keep rows of steps already covered by the checkpoint.
  std::vector<std::string> kept;
  if (step_ > 0 && std::filesystem::exists(csv_path)) {
    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < step_) kept.push_back(line);
    }
  }
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw DataError("cannot write " + csv_path.string());
  csv << kLossCsvHeader << '\n';
  for (const auto& l : kept) csv << l << '\n';

  const auto start = std::chrono::steady_clock::now();
  const auto& tc = options_.train;
  bool saved = false;
  while (step_ < tc.total_steps) {
    const StepLosses l = train_step();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.3f\n", static_cast<long long>(l.step), l.lr,
                  l.recon, l.interlevel, l.total, secs);
    csv << buf;
    csv.flush();
    saved = false;
    if (step_ % tc.checkpoint_every == 0) {
      save(ckpt_path);
      saved = true;
    }
    if (progress) progress(l);
  }
  if (!saved) save(ckpt_path);
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  CheckpointData ckpt = load_checkpoint(checkpoint);
  const auto& h = ckpt.header;
  if (!h.contains("options") || !h.contains("frames") || !h.contains("wavelengths"))
    throw DataError("checkpoint " + checkpoint.string() + " lacks split metadata");
  LoadedModel m;
  m.header = h;
  m.options = h.at("options").get<TrainerOptions>();
  m.frames.train = h.at("frames").at("train").get<std::vector<std::size_t>>();
  m.frames.eval = h.at("frames").at("eval").get<std::vector<std::size_t>>();
  m.wavelengths.train = h.at("wavelengths").at("train").get<std::vector<std::size_t>>();
  m.wavelengths.held_out = h.at("wavelengths").at("held_out").get<std::vector<std::size_t>>();
  m.field = build_field(m.options.field, m.options.train.seed);
  restore_parameters(ckpt, m.field->params());
  return m;
}

}  // namespace hsnerf
