#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/dataio.hpp"
#include "hsnerf/field.hpp"
#include "hsnerf/optim.hpp"
#include "hsnerf/render.hpp"
#include "hsnerf/spectools.hpp"

namespace hsnerf {

struct TrainConfig {
  int total_steps = 25000;
  int rays_per_step = 4096;
  /// 0 means every training wavelength.
  int wavelengths_per_step = 0;
  /// 0 means every training image.
  int cache_images = 0;
  int cache_refresh_steps = 50;
  double base_lr = 1e-2;
  double final_lr = 1e-4;
  int decay_steps = 20000;
  std::uint64_t seed = 0;
  double recon_weight = 1.0;
  double interlevel_weight = 1.0;
  int checkpoint_every = 1000;

  void validate() const;
};

/// "all" is accepted for wavelengths_per_step and cache_images.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct SplitSpec {
  double train_fraction = 0.9;
  /// Overrides train_fraction when set.
  std::optional<std::size_t> eval_count;
  /// Evenly spaced training wavelengths (0 = all channels).
  std::size_t keep_wavelengths = 0;
  /// Explicit training channel indices; overrides keep_wavelengths.
  std::vector<std::size_t> wavelength_indices;
};

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

struct FrameSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// Eval frames are evenly spaced through the sequence with a seed-derived phase.
FrameSplit split_dataset(std::size_t n_frames, const SplitSpec& spec, std::uint64_t seed);

/// Training/held-out channel indices selected by the spec.
WavelengthSplit split_wavelengths(std::size_t n_channels, const SplitSpec& spec);

/// k distinct indices from [0, n) uniformly without replacement, sorted.
std::vector<std::size_t> sample_wavelengths(std::size_t n, std::size_t k, Rng& rng);

/// Active subset (positions into the training frame list) for a step. The
/// subset is a function of (seed, step / refresh_steps) only.
std::vector<std::size_t> refresh_image_cache(std::size_t n_train, std::size_t cache_images, std::int64_t step,
                                             int refresh_steps, std::uint64_t seed);

struct StepLosses {
  std::int64_t step = 0;
  double lr = 0.0;
  double recon = 0.0;
  double interlevel = 0.0;
  double total = 0.0;
};

struct ImageMetrics {
  std::size_t frame = 0;
  std::vector<double> wavelengths;
  std::vector<double> psnr;  // per wavelength
  std::vector<double> ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

struct EvalReport {
  std::vector<ImageMetrics> images;
  double mean_psnr = 0.0;  // mean of per-image means
  double mean_ssim = 0.0;
};

/// Renders each frame at the given channels and scores it against the cube.
EvalReport evaluate(const Field& field, const SamplerConfig& sampler, const Dataset& data,
                    std::span<const std::size_t> frames, std::span<const std::size_t> channels);

/// Seen/unseen images crossed with seen/unseen wavelengths. Quadrants with
/// no held-out wavelengths are empty (not applicable).
struct QuadrantReport {
  std::optional<EvalReport> train_set;
  std::optional<EvalReport> unseen_images;
  std::optional<EvalReport> unseen_wavelengths;
  std::optional<EvalReport> both_unseen;
};

/// Raises WavelengthError for discrete variants when wavelengths were held out.
QuadrantReport superres_report(const Field& field, const SamplerConfig& sampler, const Dataset& data,
                               const FrameSplit& frames, const WavelengthSplit& wavelengths);

struct TrainerOptions {
  FieldConfig field;
  SamplerConfig sampler;
  TrainConfig train;
  SplitSpec split;
};

void to_json(nlohmann::json& j, const TrainerOptions& o);
void from_json(const nlohmann::json& j, TrainerOptions& o);

class Trainer {
 public:
  /// The field's channel axis and wavelength range are taken from the data:
  /// channels = training wavelengths, range = full cube range.
  Trainer(const Dataset& data, TrainerOptions options);

  const TrainerOptions& options() const { return options_; }
  const Field& field() const { return *field_; }
  Field& field() { return *field_; }
  const FrameSplit& frames() const { return frames_; }
  const WavelengthSplit& wavelengths() const { return wavelengths_; }
  std::int64_t step() const { return step_; }
  const AdamState& adam() const { return adam_; }

  /// One optimization step at the current step index.
  StepLosses train_step();
  /// Same as train_step but with an explicit learning rate.
  StepLosses train_step_with_lr(double lr);

  void save(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer state and step.
  void resume(const std::filesystem::path& path);

  using Progress = std::function<void(const StepLosses&)>;
  /// Trains up to total_steps writing loss.csv, checkpoints and the effective
  /// config under out_dir. With resume set and a checkpoint present the run
  /// continues from it.
  void run(const std::filesystem::path& out_dir, bool resume_run, const Progress& progress = {});

  /// Metadata stored in checkpoints.
  nlohmann::json header() const;

 private:
  const Dataset& data_;
  TrainerOptions options_;
  FrameSplit frames_;
  WavelengthSplit wavelengths_;
  std::vector<double> train_lambdas_;
  std::unique_ptr<Field> field_;
  AdamState adam_;
  std::int64_t step_ = 0;
};

/// Field config with the dataset-derived channel axis and range applied.
FieldConfig resolve_field_config(FieldConfig config, const Dataset& data, const WavelengthSplit& wavelengths);

/// Rebuilds a trained field from a checkpoint written by Trainer.
struct LoadedModel {
  TrainerOptions options;
  std::unique_ptr<Field> field;
  FrameSplit frames;
  WavelengthSplit wavelengths;
  nlohmann::json header;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Loss CSV header.
inline constexpr const char* kLossCsvHeader = "step,lr,recon,interlevel,total,seconds";

}  // namespace hsnerf
