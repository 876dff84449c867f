#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/autodiff.hpp"
#include "hsnerf/field.hpp"
#include "hsnerf/rng.hpp"
#include "hsnerf/sampling.hpp"

namespace hsnerf {

/// Sample counts of the proposal chain and the fine stage.
struct SamplerConfig {
  /// One entry per proposal network, in stage order.
  std::vector<int> proposal_samples{96, 48};
  int fine_samples = 32;
  /// Added to every proposal bin weight before resampling.
  double histogram_padding = 0.01;

  void validate() const;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

struct RenderRequest {
  const RayBatch& rays;  // clipped against box
  const SceneBox& box;
  std::span<const double> wavelengths;
  std::span<const double> background;  // one value per wavelength
  /// Perturb stratified samples and resampling quantiles (training).
  bool jitter = false;
  Rng* rng = nullptr;
  /// Record the proposal loss.
  bool with_interlevel = false;
};

struct RenderResult {
  Var pixel;       // [R, L]
  Var interlevel;  // scalar; constant 0 when not requested or no ray hits
  std::size_t hit_rays = 0;
};

/// Proposal sampling followed by fine compositing for every ray and wavelength.
RenderResult render_rays(Tape& tape, const Field& field, const SamplerConfig& sampler, const RenderRequest& request);

/// Inference render of a full camera: [H*W, L], row = pixel index.
Tensor render_image(const Field& field, const SamplerConfig& sampler, const CameraFrame& camera, const SceneBox& box,
                    std::span<const double> wavelengths, std::span<const double> background,
                    std::size_t chunk = 2048);

}  // namespace hsnerf
