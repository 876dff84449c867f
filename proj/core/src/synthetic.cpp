#include "hsnerf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "hsnerf/error.hpp"

namespace hsnerf {

double Spectrum::operator()(double lambda_nm) const {
  double v = offset;
  for (const auto& t : terms) {
    const double z = (lambda_nm - t.mean_nm) / t.sigma_nm;
    v += t.amplitude * std::exp(-0.5 * z * z);
  }
  return std::clamp(v, 0.0, 1.0);
}

double Sphere::profile(const Vec3& p) const {
  const double dx = p[0] - center[0], dy = p[1] - center[1], dz = p[2] - center[2];
  const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
  const double t = std::clamp((radius - d) / edge, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

void SyntheticScene::validate() const {
  for (const auto& s : spheres) {
    if (!(s.radius > 0.0)) throw ConfigError("synthetic scene: sphere radii must be positive");
    if (!(s.edge > 0.0) || s.edge > s.radius) throw ConfigError("synthetic scene: sphere edge must be in (0, radius]");
    if (!(s.density_scale >= 0.0)) throw ConfigError("synthetic scene: density_scale must be >= 0");
    for (const auto& t : s.radiance.terms)
      if (!(t.sigma_nm > 0.0)) throw ConfigError("synthetic scene: spectrum widths must be positive");
    for (const auto& t : s.density.terms)
      if (!(t.sigma_nm > 0.0)) throw ConfigError("synthetic scene: spectrum widths must be positive");
  }
  if (!(background >= 0.0 && background <= 1.0)) throw ConfigError("synthetic scene: background must be in [0,1]");
}

void SyntheticScene::query(const Vec3& p, double lambda_nm, double& density, double& radiance) const {
  density = 0.0;
  double mix = 0.0;
  for (const auto& s : spheres) {
    const double prof = s.profile(p);
    if (prof <= 0.0) continue;
    const double d = s.density_scale * s.density(lambda_nm) * prof;
    density += d;
    mix += d * s.radiance(lambda_nm);
  }
  radiance = density > 0.0 ? mix / density : 0.0;
}

// -------------------------------------------------------------------- json

namespace {

void spectrum_to_json(nlohmann::json& j, const Spectrum& s) {
  j["offset"] = s.offset;
  j["terms"] = nlohmann::json::array();
  for (const auto& t : s.terms) j["terms"].push_back({{"amplitude", t.amplitude}, {"mean_nm", t.mean_nm}, {"sigma_nm", t.sigma_nm}});
}

Spectrum spectrum_from_json(const nlohmann::json& j) {
  Spectrum s;
  s.offset = j.value("offset", 0.0);
  if (j.contains("terms"))
    for (const auto& t : j.at("terms"))
      s.terms.push_back({t.value("amplitude", 1.0), t.value("mean_nm", 550.0), t.value("sigma_nm", 50.0)});
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const SyntheticScene& s) {
  j = nlohmann::json::object();
  j["background"] = s.background;
  j["spheres"] = nlohmann::json::array();
  for (const auto& sp : s.spheres) {
    nlohmann::json o{{"center", sp.center}, {"radius", sp.radius}, {"density_scale", sp.density_scale}, {"edge", sp.edge}};
    spectrum_to_json(o["radiance"], sp.radiance);
    spectrum_to_json(o["density"], sp.density);
    j["spheres"].push_back(o);
  }
}

void from_json(const nlohmann::json& j, SyntheticScene& s) {
  try {
    s.background = j.value("background", 0.0);
    s.spheres.clear();
    if (j.contains("spheres"))
      for (const auto& o : j.at("spheres")) {
        Sphere sp;
        sp.center = o.at("center").get<Vec3>();
        sp.radius = o.at("radius").get<double>();
        sp.density_scale = o.value("density_scale", sp.density_scale);
        sp.edge = o.value("edge", sp.edge);
        if (o.contains("radiance")) sp.radiance = spectrum_from_json(o.at("radiance"));
        if (o.contains("density")) sp.density = spectrum_from_json(o.at("density"));
        s.spheres.push_back(sp);
      }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scene description: ") + e.what());
  }
}

SyntheticScene three_sphere_scene() {
  SyntheticScene s;
  s.background = 0.0;
  Sphere a;
  a.center = {-0.55, 0.0, 0.1};
  a.radius = 0.45;
  a.radiance = {0.1, {{0.7, 520.0, 45.0}}};
  Sphere b;
  b.center = {0.5, 0.05, -0.25};
  b.radius = 0.4;
  b.radiance = {0.15, {{0.75, 710.0, 60.0}}};
  Sphere c;
  c.center = {0.05, 0.3, 0.6};
  c.radius = 0.3;
  c.radiance = {0.2, {{0.5, 480.0, 50.0}, {0.3, 790.0, 70.0}}};
  s.spheres = {a, b, c};
  return s;
}

// ----------------------------------------------------------------- cameras

std::vector<CameraFrame> ring_cameras(const RingSpec& ring, int width, int height) {
  if (ring.count < 1) throw ConfigError("ring_cameras: count must be >= 1");
  if (!(ring.radius > 0.0) || !(ring.fov_deg > 0.0 && ring.fov_deg < 180.0))
    throw ConfigError("ring_cameras: radius must be positive and fov in (0, 180)");
  const double f = 0.5 * width / std::tan(0.5 * ring.fov_deg * std::numbers::pi / 180.0);
  std::vector<CameraFrame> cams;
  for (int i = 0; i < ring.count; ++i) {
    const double a = 2.0 * std::numbers::pi * i / ring.count;
    const Vec3 eye{ring.target[0] + ring.radius * std::cos(a), ring.target[1] + ring.height,
                   ring.target[2] + ring.radius * std::sin(a)};
    CameraFrame cam;
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.camera_to_world = look_at(eye, ring.target);
    char name[64];
    std::snprintf(name, sizeof name, "images/frame_%03d.hsc", i);
    cam.image_path = name;
    cams.push_back(cam);
  }
  return cams;
}

std::vector<double> channel_grid(double lambda_min, double lambda_max, int channels) {
  if (channels < 1) throw ConfigError("channel_grid: need at least one channel");
  if (channels > 1 && !(lambda_max > lambda_min)) throw ConfigError("channel_grid: need lambda_min < lambda_max");
  std::vector<double> out(static_cast<std::size_t>(channels));
  for (int i = 0; i < channels; ++i)
    out[static_cast<std::size_t>(i)] =
        channels == 1 ? lambda_min : lambda_min + (lambda_max - lambda_min) * i / (channels - 1);
  // Round-trip through f32 so the file axis equals the in-memory axis.
  for (auto& w : out) w = static_cast<float>(w);
  return out;
}

// --------------------------------------------------------------- rendering

namespace {

struct Prepared {
  const SyntheticScene& scene;
  std::vector<std::vector<double>> radiance;  // [sphere][lambda]
  std::vector<std::vector<double>> density;
  SceneBox bounds;
  bool empty;

  Prepared(const SyntheticScene& s, const std::vector<double>& wavelengths) : scene(s), empty(s.spheres.empty()) {
    bounds.min.fill(1e300);
    bounds.max.fill(-1e300);
    for (const auto& sp : s.spheres) {
      std::vector<double> r, d;
      for (double w : wavelengths) {
        r.push_back(sp.radiance(w));
        d.push_back(sp.density_scale * sp.density(w));
      }
      radiance.push_back(std::move(r));
      density.push_back(std::move(d));
      for (std::size_t k = 0; k < 3; ++k) {
        bounds.min[k] = std::min(bounds.min[k], sp.center[k] - sp.radius);
        bounds.max[k] = std::max(bounds.max[k], sp.center[k] + sp.radius);
      }
    }
  }

  void trace(const Vec3& o, const Vec3& dir, int steps, double* out, std::size_t L) const {
    std::fill(out, out + L, scene.background);
    if (empty) return;
    const auto hit = ray_box_clip(o, dir, bounds);
    if (!hit) return;
    const double dt = (hit->far - hit->near) / steps;
    std::vector<double> T(L, 1.0), acc(L, 0.0), color(L, 0.0);
    std::vector<double> prof(scene.spheres.size());
    for (int i = 0; i < steps; ++i) {
      const double t = hit->near + (i + 0.5) * dt;
      const Vec3 p{o[0] + t * dir[0], o[1] + t * dir[1], o[2] + t * dir[2]};
      bool any = false;
      for (std::size_t s = 0; s < prof.size(); ++s) {
        prof[s] = scene.spheres[s].profile(p);
        any = any || prof[s] > 0.0;
      }
      if (!any) continue;
      for (std::size_t l = 0; l < L; ++l) {
        double sigma = 0.0, mix = 0.0;
        for (std::size_t s = 0; s < prof.size(); ++s) {
          if (prof[s] <= 0.0) continue;
          const double d = density[s][l] * prof[s];
          sigma += d;
          mix += d * radiance[s][l];
        }
        if (sigma <= 0.0) continue;
        const double trans = std::exp(-sigma * dt);
        const double w = T[l] * (1.0 - trans);
        color[l] += w * (mix / sigma);
        acc[l] += w;
        T[l] *= trans;
      }
    }
    for (std::size_t l = 0; l < L; ++l) out[l] = color[l] + (1.0 - acc[l]) * scene.background;
  }
};

}  // namespace

std::vector<double> render_spectrum(const SyntheticScene& scene, const Vec3& origin, const Vec3& direction,
                                    const std::vector<double>& wavelengths, int march_steps) {
  if (march_steps < 1) throw ConfigError("render_spectrum: march_steps must be >= 1");
  const Prepared prep(scene, wavelengths);
  std::vector<double> out(wavelengths.size());
  prep.trace(origin, direction, march_steps, out.data(), out.size());
  return out;
}

HyperCube render_cube(const SyntheticScene& scene, const CameraFrame& camera, const std::vector<double>& wavelengths,
                      int march_steps) {
  if (march_steps < 1) throw ConfigError("render_cube: march_steps must be >= 1");
  scene.validate();
  const Prepared prep(scene, wavelengths);
  HyperCube cube(camera.height, camera.width, wavelengths);
  const std::size_t L = wavelengths.size();
  std::vector<std::size_t> pixels(camera.pixel_count());
  for (std::size_t p = 0; p < pixels.size(); ++p) pixels[p] = p;
  const RayBatch rays = generate_rays(camera, pixels);
  std::vector<double> spec(L);
  for (std::size_t p = 0; p < pixels.size(); ++p) {
    prep.trace(rays.origins[p], rays.directions[p], march_steps, spec.data(), L);
    for (std::size_t l = 0; l < L; ++l) cube.data[p * L + l] = static_cast<float>(std::clamp(spec[l], 0.0, 1.0));
  }
  return cube;
}

SyntheticDataset generate_synthetic_dataset(const SyntheticScene& scene, const SynthOptions& opt) {
  scene.validate();
  if (opt.width < 1 || opt.height < 1) throw ConfigError("synthetic dataset: image size must be positive");
  const auto wavelengths = channel_grid(opt.lambda_min, opt.lambda_max, opt.channels);
  SyntheticDataset ds;
  const auto cams = ring_cameras(opt.ring, opt.width, opt.height);
  ds.poses.fl_x = cams.front().fx;
  ds.poses.fl_y = cams.front().fy;
  ds.poses.cx = cams.front().cx;
  ds.poses.cy = cams.front().cy;
  ds.poses.w = opt.width;
  ds.poses.h = opt.height;
  ds.poses.frames = cams;
  ds.poses.extra["background"] = scene.background;
  ds.poses.extra["depth_range"] = {opt.depth_min, opt.depth_max};
  for (const auto& cam : cams) ds.cubes.push_back(render_cube(scene, cam, wavelengths, opt.march_steps));
  return ds;
}

void write_synthetic_dataset(const SyntheticDataset& ds, const SyntheticScene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < ds.cubes.size(); ++i) write_cube(ds.cubes[i], dir / ds.poses.frames[i].image_path);
  write_pose_file(ds.poses, dir / "poses.json");
  std::ofstream os(dir / "scene.json");
  if (!os) throw DataError("cannot write scene description under " + dir.string());
  os << nlohmann::json(scene).dump(2) << '\n';
}

}  // namespace hsnerf
