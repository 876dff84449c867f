#pragma once

// Subcommand implementations shared by the hsnerf executable and the tests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsnerf/synthetic.hpp"
#include "hsnerf/trainer.hpp"

namespace hsnerf::cli {

namespace fs = std::filesystem;

struct SynthArgs {
  fs::path out;
  std::optional<fs::path> scene;  // JSON scene description; default three spheres
  bool empty_scene = false;
  SynthOptions options;
  std::uint64_t seed = 0;
};
void cmd_synth(const SynthArgs& args);

/// Values left unset keep the config-file (or default) value.
struct TrainOverrides {
  std::optional<int> steps;
  std::optional<int> rays;
  std::optional<int> wavelengths_per_step;
  std::optional<std::size_t> keep_wavelengths;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> radiance;
  std::optional<std::string> density;
  std::optional<std::string> proposal;
};

/// Reads a JSON config file ({field, sampler, train, split}) and applies overrides.
TrainerOptions load_options(const std::optional<fs::path>& config, const TrainOverrides& overrides);

struct TrainArgs {
  fs::path data;
  fs::path out;
  std::optional<fs::path> config;
  TrainOverrides overrides;
  bool resume = true;
  bool quiet = false;
};
void cmd_train(const TrainArgs& args);

struct RenderArgs {
  fs::path checkpoint;
  std::optional<fs::path> data;  // defaults to the dataset recorded in the checkpoint
  std::size_t frame = 0;
  std::string wavelengths = "all";  // "all" or comma-separated nm values
  fs::path out;
  std::optional<fs::path> rgb;
  double r_nm = 622.0;
  double g_nm = 555.0;
  double b_nm = 503.0;
};
void cmd_render(const RenderArgs& args);

struct EvalArgs {
  fs::path checkpoint;
  std::optional<fs::path> data;
  fs::path out;
};
QuadrantReport cmd_eval(const EvalArgs& args);

/// The six architecture rows in table order.
struct AblationRow {
  RadianceVariant radiance;
  DensityVariant density;
  ProposalVariant proposal;
  std::string name() const;
};
const std::vector<AblationRow>& ablation_rows();

struct AblationResult {
  AblationRow row;
  double train_psnr = 0.0;
  double train_ssim = 0.0;
  double eval_psnr = 0.0;
  double eval_ssim = 0.0;
  int steps = 0;
};

struct AblateArgs {
  fs::path data;
  fs::path out;
  std::optional<fs::path> config;
  TrainOverrides overrides;
  bool quiet = false;
};
/// Trains and evaluates every row, writing ablation.csv. Rows whose results
/// already exist under out are reused.
std::vector<AblationResult> cmd_ablate(const AblateArgs& args);

struct SensorFitArgs {
  fs::path cube;
  fs::path rgb;
  std::optional<fs::path> mask;  // background pixels are excluded when given
  fs::path out;
};
/// Returns the RMS residual of the fit.
double cmd_sensor_fit(const SensorFitArgs& args);

struct SensorSimulateArgs {
  fs::path cube;
  fs::path response;
  fs::path out;
};
void cmd_sensor_simulate(const SensorSimulateArgs& args);

/// 0 success, 2 config, 3 data, 4 numerical, 1 anything else.
int exit_code_for_current_exception();

}  // namespace hsnerf::cli
