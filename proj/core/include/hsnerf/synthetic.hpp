#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/dataio.hpp"
#include "hsnerf/sampling.hpp"

namespace hsnerf {

struct GaussianTerm {
  double amplitude = 1.0;
  double mean_nm = 550.0;
  double sigma_nm = 50.0;
};

/// offset + sum_k a_k exp(-(lambda - mu_k)^2 / (2 s_k^2)), clamped to [0,1].
struct Spectrum {
  double offset = 0.0;
  std::vector<GaussianTerm> terms;

  double operator()(double lambda_nm) const;
};

struct Sphere {
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 0.5;
  Spectrum radiance;
  /// Relative density spectrum, scaled by density_scale.
  Spectrum density{1.0, {}};
  double density_scale = 30.0;
  /// Width of the smooth density falloff at the surface.
  double edge = 0.05;

  /// Radial profile in [0,1]: 1 inside radius - edge, 0 outside radius.
  double profile(const Vec3& p) const;
};

struct SyntheticScene {
  std::vector<Sphere> spheres;
  double background = 0.0;

  void validate() const;
  /// Overlapping spheres add density; radiance is the density-weighted mix.
  void query(const Vec3& p, double lambda_nm, double& density, double& radiance) const;
};

void to_json(nlohmann::json& j, const SyntheticScene& s);
void from_json(const nlohmann::json& j, SyntheticScene& s);

/// Three overlapping-free spheres with distinct band-limited spectra.
SyntheticScene three_sphere_scene();

/// Cameras on a horizontal circle around `target`, all looking at it.
struct RingSpec {
  int count = 20;
  double radius = 4.0;
  double height = 1.0;
  double fov_deg = 40.0;
  Vec3 target{0.0, 0.0, 0.0};
};

std::vector<CameraFrame> ring_cameras(const RingSpec& ring, int width, int height);

struct SynthOptions {
  RingSpec ring;
  int width = 48;
  int height = 48;
  int channels = 16;
  double lambda_min = 450.0;
  double lambda_max = 850.0;
  int march_steps = 512;
  /// Depth range recorded for scene-box construction.
  double depth_min = 2.0;
  double depth_max = 6.0;
};

/// Evenly spaced channel centres from lambda_min to lambda_max inclusive.
std::vector<double> channel_grid(double lambda_min, double lambda_max, int channels);

/// Fixed-step quadrature of the compositing integral over the sphere bounds.
std::vector<double> render_spectrum(const SyntheticScene& scene, const Vec3& origin, const Vec3& direction,
                                    const std::vector<double>& wavelengths, int march_steps);

HyperCube render_cube(const SyntheticScene& scene, const CameraFrame& camera, const std::vector<double>& wavelengths,
                      int march_steps);

struct SyntheticDataset {
  PoseFile poses;
  std::vector<HyperCube> cubes;
};

SyntheticDataset generate_synthetic_dataset(const SyntheticScene& scene, const SynthOptions& options);

/// Writes poses.json, images/*.hsc and scene.json under dir.
void write_synthetic_dataset(const SyntheticDataset& ds, const SyntheticScene& scene, const std::filesystem::path& dir);

}  // namespace hsnerf
