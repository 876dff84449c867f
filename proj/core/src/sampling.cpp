#include "hsnerf/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "hsnerf/error.hpp"

namespace hsnerf {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

Mat4 identity_pose() { return {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}; }

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = normalized(sub(target, eye));
  const Vec3 z = {-forward[0], -forward[1], -forward[2]};
  const Vec3 x = normalized(cross(up, z));
  const Vec3 y = cross(z, x);
  return {x[0], y[0], z[0], eye[0], x[1], y[1], z[1], eye[1], x[2], y[2], z[2], eye[2], 0, 0, 0, 1};
}

// ------------------------------------------------------------ CameraFrame

void CameraFrame::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw DataError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DataError("camera image size must be positive");
  const auto& m = camera_to_world;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += m[static_cast<std::size_t>(k * 4 + a)] * m[static_cast<std::size_t>(k * 4 + b)];
      if (std::abs(d - (a == b ? 1.0 : 0.0)) > 1e-6)
        throw DataError("camera_to_world rotation block is not orthonormal (" + image_path + ")");
    }
}

Vec3 CameraFrame::rotate(const Vec3& v) const {
  const auto& m = camera_to_world;
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[4] * v[0] + m[5] * v[1] + m[6] * v[2],
          m[8] * v[0] + m[9] * v[1] + m[10] * v[2]};
}

// --------------------------------------------------------------- SceneBox

bool SceneBox::contains(const Vec3& p, double tol) const {
  for (int k = 0; k < 3; ++k)
    if (p[static_cast<std::size_t>(k)] < min[static_cast<std::size_t>(k)] - tol ||
        p[static_cast<std::size_t>(k)] > max[static_cast<std::size_t>(k)] + tol)
      return false;
  return true;
}

Vec3 SceneBox::normalize(const Vec3& p) const {
  Vec3 out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = (p[k] - min[k]) / (max[k] - min[k]);
  return out;
}

// ------------------------------------------------------------------- rays

RayBatch generate_rays(const CameraFrame& camera, std::span<const std::size_t> pixels) {
  RayBatch rays;
  rays.origins.reserve(pixels.size());
  rays.directions.reserve(pixels.size());
  const Vec3 origin = camera.origin();
  const std::size_t total = camera.pixel_count();
  for (std::size_t p : pixels) {
    if (p >= total) throw DataError("pixel index " + std::to_string(p) + " outside the image");
    const double u = static_cast<double>(p % static_cast<std::size_t>(camera.width));
    const double v = static_cast<double>(p / static_cast<std::size_t>(camera.width));
    const Vec3 local = {(u + 0.5 - camera.cx) / camera.fx, -(v + 0.5 - camera.cy) / camera.fy, -1.0};
    rays.origins.push_back(origin);
    rays.directions.push_back(normalized(camera.rotate(local)));
    rays.pixels.push_back(p);
  }
  rays.near.assign(pixels.size(), 0.0);
  rays.far.assign(pixels.size(), 0.0);
  rays.hit.assign(pixels.size(), false);
  return rays;
}

std::optional<BoxHit> ray_box_clip(const Vec3& origin, const Vec3& direction, const SceneBox& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < 3; ++k) {
    if (std::abs(direction[k]) < 1e-15) {
      if (origin[k] < box.min[k] || origin[k] > box.max[k]) return std::nullopt;
      continue;
    }
    double a = (box.min[k] - origin[k]) / direction[k];
    double b = (box.max[k] - origin[k]) / direction[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  t0 = std::max(t0, 0.0);
  if (!(t1 > t0)) return std::nullopt;
  return BoxHit{t0, t1};
}

void clip_rays(RayBatch& rays, const SceneBox& box) {
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const auto hit = ray_box_clip(rays.origins[i], rays.directions[i], box);
    rays.hit[i] = hit.has_value();
    rays.near[i] = hit ? hit->near : 0.0;
    rays.far[i] = hit ? hit->far : 0.0;
  }
}

std::array<Vec3, 8> frustum_corners(const CameraFrame& camera, double d_min, double d_max) {
  std::array<Vec3, 8> out;
  const Vec3 o = camera.origin();
  std::size_t k = 0;
  for (double d : {d_min, d_max})
    for (double u : {0.0, static_cast<double>(camera.width)})
      for (double v : {0.0, static_cast<double>(camera.height)}) {
        const Vec3 local = {(u - camera.cx) / camera.fx * d, -(v - camera.cy) / camera.fy * d, -d};
        const Vec3 w = camera.rotate(local);
        out[k++] = {o[0] + w[0], o[1] + w[1], o[2] + w[2]};
      }
  return out;
}

SceneBox compute_scene_box(std::span<const CameraFrame> cameras, double d_min, double d_max, bool allow_single) {
  if (cameras.empty() || (cameras.size() < 2 && !allow_single))
    throw DataError("compute_scene_box needs at least two cameras");
  if (!(d_min >= 0.0) || !(d_max > d_min)) throw ConfigError("compute_scene_box: need 0 <= d_min < d_max");
  // Extents on the xz plane bound x and z, on the yz plane y and z; the
  // intersection over cameras of both projections gives the box.
  SceneBox box;
  box.min.fill(-std::numeric_limits<double>::infinity());
  box.max.fill(std::numeric_limits<double>::infinity());
  for (const auto& cam : cameras) {
    const auto corners = frustum_corners(cam, d_min, d_max);
    Vec3 lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (const auto& c : corners)
      for (std::size_t k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], c[k]);
        hi[k] = std::max(hi[k], c[k]);
      }
    // xz projection -> (x, z) extent, yz projection -> (y, z) extent.
    const double xz_lo[2] = {lo[0], lo[2]}, xz_hi[2] = {hi[0], hi[2]};
    const double yz_lo[2] = {lo[1], lo[2]}, yz_hi[2] = {hi[1], hi[2]};
    box.min[0] = std::max(box.min[0], xz_lo[0]);
    box.max[0] = std::min(box.max[0], xz_hi[0]);
    box.min[1] = std::max(box.min[1], yz_lo[0]);
    box.max[1] = std::min(box.max[1], yz_hi[0]);
    box.min[2] = std::max({box.min[2], xz_lo[1], yz_lo[1]});
    box.max[2] = std::min({box.max[2], xz_hi[1], yz_hi[1]});
  }
  for (std::size_t k = 0; k < 3; ++k)
    if (!(box.max[k] > box.min[k]))
      throw DataError("camera frusta have no common region; review the camera poses and depth range");
  return box;
}

// ---------------------------------------------------------------- samples

namespace {
void finish(SampleSet& s) {
  s.deltas.resize(s.edges.size() - 1);
  for (std::size_t i = 0; i + 1 < s.edges.size(); ++i) s.deltas[i] = s.edges[i + 1] - s.edges[i];
}
}  // namespace

SampleSet stratified_samples(double near, double far, int K, bool jitter, Rng& rng) {
  if (K < 1) throw ConfigError("stratified_samples: K must be >= 1");
  if (!(far > near)) throw ConfigError("stratified_samples: need near < far");
  SampleSet s;
  const auto k = static_cast<std::size_t>(K);
  s.edges.resize(k + 1);
  const double width = far - near;
  for (std::size_t i = 0; i <= k; ++i) s.edges[i] = near + width * static_cast<double>(i) / static_cast<double>(K);
  s.edges[k] = far;
  s.points.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double u = jitter ? rng.uniform() : 0.5;
    s.points[i] = s.edges[i] + u * (s.edges[i + 1] - s.edges[i]);
  }
  finish(s);
  return s;
}

SampleSet pdf_resample(std::span<const double> edges, std::span<const double> weights, int K, Rng* rng) {
  if (K < 1) throw ConfigError("pdf_resample: K must be >= 1");
  if (edges.size() != weights.size() + 1 || weights.empty())
    throw ShapeError("pdf_resample: need len(edges) == len(weights) + 1");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw NumericalError("pdf_resample: weights must be finite and >= 0");
    total += w;
  }
  SampleSet s;
  const auto k = static_cast<std::size_t>(K);
  const std::size_t m = weights.size();
  std::vector<double> cdf(m + 1, 0.0);
  if (total > 0.0) {
    for (std::size_t j = 0; j < m; ++j) cdf[j + 1] = cdf[j] + weights[j] / total;
  } else {
    s.fallback_uniform = true;
    for (std::size_t j = 0; j < m; ++j) cdf[j + 1] = static_cast<double>(j + 1) / static_cast<double>(m);
  }
  cdf[m] = 1.0;
  s.edges.resize(k + 1);
  const double n_edges = static_cast<double>(k + 1);
  for (std::size_t i = 0; i <= k; ++i) {
    const double u = (static_cast<double>(i) + (rng ? rng->uniform() : 0.5)) / n_edges;
    // First cdf strictly above u: bin j = that - 1 has cdf[j] <= u < cdf[j+1].
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t j = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf.begin() - 1, 0));
    j = std::min(j, m - 1);
    const double mass = cdf[j + 1] - cdf[j];
    const double frac = mass > 0.0 ? (u - cdf[j]) / mass : 0.0;
    s.edges[i] = edges[j] + std::clamp(frac, 0.0, 1.0) * (edges[j + 1] - edges[j]);
  }
  s.points.resize(k);
  for (std::size_t i = 0; i < k; ++i) s.points[i] = 0.5 * (s.edges[i] + s.edges[i + 1]);
  finish(s);
  return s;
}

// -------------------------------------------------------------- pose file

PoseFile parse_pose_json(const nlohmann::json& j) {
  PoseFile p;
  try {
    p.fl_x = j.at("fl_x").get<double>();
    p.fl_y = j.at("fl_y").get<double>();
    p.cx = j.at("cx").get<double>();
    p.cy = j.at("cy").get<double>();
    p.w = j.at("w").get<int>();
    p.h = j.at("h").get<int>();
    for (const auto& f : j.at("frames")) {
      CameraFrame cam;
      cam.fx = p.fl_x;
      cam.fy = p.fl_y;
      cam.cx = p.cx;
      cam.cy = p.cy;
      cam.width = p.w;
      cam.height = p.h;
      cam.image_path = f.at("file_path").get<std::string>();
      const auto& m = f.at("transform_matrix");
      if (m.size() != 4) throw DataError("transform_matrix must have 4 rows");
      for (std::size_t r = 0; r < 4; ++r) {
        if (m[r].size() != 4) throw DataError("transform_matrix rows must have 4 entries");
        for (std::size_t c = 0; c < 4; ++c) cam.camera_to_world[r * 4 + c] = m[r][c].get<double>();
      }
      cam.validate();
      p.frames.push_back(std::move(cam));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed pose file: ") + e.what());
  }
  for (const auto& [key, value] : j.items())
    if (key != "fl_x" && key != "fl_y" && key != "cx" && key != "cy" && key != "w" && key != "h" && key != "frames")
      p.extra[key] = value;
  return p;
}

nlohmann::json pose_to_json(const PoseFile& poses) {
  nlohmann::json j = poses.extra.is_object() ? poses.extra : nlohmann::json::object();
  j["fl_x"] = poses.fl_x;
  j["fl_y"] = poses.fl_y;
  j["cx"] = poses.cx;
  j["cy"] = poses.cy;
  j["w"] = poses.w;
  j["h"] = poses.h;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& cam : poses.frames) {
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t r = 0; r < 4; ++r)
      m.push_back({cam.camera_to_world[r * 4], cam.camera_to_world[r * 4 + 1], cam.camera_to_world[r * 4 + 2],
                   cam.camera_to_world[r * 4 + 3]});
    frames.push_back({{"file_path", cam.image_path}, {"transform_matrix", m}});
  }
  j["frames"] = frames;
  return j;
}

PoseFile read_pose_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open pose file: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("pose file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_pose_json(j);
}

void write_pose_file(const PoseFile& poses, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write pose file: " + path.string());
  os << pose_to_json(poses).dump(2) << '\n';
}

}  // namespace hsnerf
