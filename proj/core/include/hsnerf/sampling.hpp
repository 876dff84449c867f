#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/rng.hpp"

namespace hsnerf {

using Vec3 = std::array<double, 3>;
/// Row-major 4x4 rigid transform.
using Mat4 = std::array<double, 16>;

Mat4 identity_pose();
/// Camera-to-world pose at `eye` looking at `target` (-z forward, +y up).
Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = {0.0, 1.0, 0.0});

/// Undistorted pinhole camera. Camera convention: -z forward, +y up, +x right.
struct CameraFrame {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  Mat4 camera_to_world = identity_pose();
  std::string image_path;

  void validate() const;
  Vec3 origin() const { return {camera_to_world[3], camera_to_world[7], camera_to_world[11]}; }
  Vec3 rotate(const Vec3& v) const;
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

struct SceneBox {
  Vec3 min{0.0, 0.0, 0.0};
  Vec3 max{1.0, 1.0, 1.0};

  bool contains(const Vec3& p, double tol = 0.0) const;
  /// Maps the box onto [0,1]^3.
  Vec3 normalize(const Vec3& p) const;
};

struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<std::size_t> pixels;
  std::vector<double> near;
  std::vector<double> far;
  std::vector<bool> hit;

  std::size_t size() const { return origins.size(); }
};

/// Rays through pixel centres; pixel index = row * width + column.
RayBatch generate_rays(const CameraFrame& camera, std::span<const std::size_t> pixels);

struct BoxHit {
  double near;
  double far;
};

/// Slab intersection of a ray with the box; near is clamped to 0 when the
/// origin is inside. Empty result means the ray misses.
std::optional<BoxHit> ray_box_clip(const Vec3& origin, const Vec3& direction, const SceneBox& box);

/// Fills near/far/hit of every ray.
void clip_rays(RayBatch& rays, const SceneBox& box);

/// Sampling bounds shared by every camera: the intersection of the extents
/// each frustum (truncated to [d_min, d_max]) projects onto the xz and yz
/// planes. Requires at least two cameras unless allow_single is set.
SceneBox compute_scene_box(std::span<const CameraFrame> cameras, double d_min, double d_max,
                           bool allow_single = false);

/// Eight world-space frustum corners at depths d_min and d_max.
std::array<Vec3, 8> frustum_corners(const CameraFrame& camera, double d_min, double d_max);

/// Samples along one ray: K bins with K+1 increasing edges, one query point
/// per bin and the bin widths.
struct SampleSet {
  std::vector<double> edges;
  std::vector<double> points;
  std::vector<double> deltas;
  /// Set when pdf_resample received all-zero weights and fell back to uniform.
  bool fallback_uniform = false;

  std::size_t size() const { return points.size(); }
};

/// K uniform bins over [near, far]; with jitter the query point is uniform
/// inside its bin, otherwise the bin midpoint.
SampleSet stratified_samples(double near, double far, int K, bool jitter, Rng& rng);

/// Inverse-transform sampling of K bins (K+1 edges) from the piecewise
/// constant density proportional to weights over edges. rng == nullptr gives
/// the deterministic quantiles (i + 0.5) / (K + 1).
SampleSet pdf_resample(std::span<const double> edges, std::span<const double> weights, int K, Rng* rng);

/// Pose file: {fl_x, fl_y, cx, cy, w, h, frames: [{file_path, transform_matrix}]}
/// with transform_matrix a row-major 4x4 camera-to-world matrix. Unknown
/// top-level keys are preserved in `extra`.
struct PoseFile {
  double fl_x = 1.0;
  double fl_y = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int w = 0;
  int h = 0;
  std::vector<CameraFrame> frames;
  nlohmann::json extra = nlohmann::json::object();
};

PoseFile parse_pose_json(const nlohmann::json& j);
nlohmann::json pose_to_json(const PoseFile& poses);
PoseFile read_pose_file(const std::filesystem::path& path);
void write_pose_file(const PoseFile& poses, const std::filesystem::path& path);

}  // namespace hsnerf
