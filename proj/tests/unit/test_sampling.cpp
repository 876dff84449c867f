#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hsnerf/error.hpp"
#include "hsnerf/sampling.hpp"
#include "hsnerf/synthetic.hpp"

namespace hsnerf {
namespace {

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

CameraFrame camera_at(const Vec3& eye, const Vec3& target, int w = 32, int h = 24) {
  CameraFrame c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = 30.0;
  c.cx = w / 2.0;
  c.cy = h / 2.0;
  c.camera_to_world = look_at(eye, target);
  return c;
}

// Pinhole projection test: inside the image and between the depth planes.
bool in_frustum(const CameraFrame& cam, const Vec3& p, double dmin, double dmax) {
  const auto& m = cam.camera_to_world;
  const Vec3 o = cam.origin();
  const Vec3 d{p[0] - o[0], p[1] - o[1], p[2] - o[2]};
  // World to camera: transpose of the rotation block.
  Vec3 c;
  for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] = m[static_cast<std::size_t>(k)] * d[0] +
                                                               m[static_cast<std::size_t>(4 + k)] * d[1] +
                                                               m[static_cast<std::size_t>(8 + k)] * d[2];
  const double depth = -c[2];
  if (depth < dmin || depth > dmax) return false;
  const double u = cam.cx + cam.fx * c[0] / depth;
  const double v = cam.cy - cam.fy * c[1] / depth;
  return u >= 0 && u <= cam.width && v >= 0 && v <= cam.height;
}

TEST(Camera, LookAtIsOrthonormalAndFacesTarget) {
  const CameraFrame c = camera_at({3, 1, 2}, {0, 0, 0});
  EXPECT_NO_THROW(c.validate());
  const Vec3 fwd = c.rotate({0, 0, -1});
  const Vec3 to{-3, -1, -2};
  const double n = norm(to);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(fwd[k], to[k] / n, 1e-12);
}

TEST(Camera, ValidateRejectsSkewedRotation) {
  CameraFrame c = camera_at({0, 0, 3}, {0, 0, 0});
  c.camera_to_world[0] = 1.1;
  EXPECT_THROW(c.validate(), DataError);
  c = camera_at({0, 0, 3}, {0, 0, 0});
  c.fx = 0.0;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(Rays, DirectionsAreUnitAndPixelCentred) {
  CameraFrame c = camera_at({0, 0, 0}, {0, 0, -1}, 4, 4);
  c.camera_to_world = identity_pose();
  std::vector<std::size_t> px(16);
  for (std::size_t i = 0; i < 16; ++i) px[i] = i;
  const RayBatch r = generate_rays(c, px);
  for (const auto& d : r.directions) EXPECT_NEAR(norm(d), 1.0, 1e-12);
  // Pixel (u=0, v=0) points left and up.
  EXPECT_LT(r.directions[0][0], 0.0);
  EXPECT_GT(r.directions[0][1], 0.0);
  EXPECT_LT(r.directions[0][2], 0.0);
  // Pixel (u=3, v=3) points right and down.
  EXPECT_GT(r.directions[15][0], 0.0);
  EXPECT_LT(r.directions[15][1], 0.0);
}

TEST(Clip, AxisAlignedExample) {
  const SceneBox box;
  const auto hit = ray_box_clip({-2, 0.5, 0.5}, {1, 0, 0}, box);
  ASSERT_TRUE(hit);
  EXPECT_DOUBLE_EQ(hit->near, 2.0);
  EXPECT_DOUBLE_EQ(hit->far, 3.0);
}

TEST(Clip, ParallelOutsideMisses) {
  const SceneBox box;
  EXPECT_FALSE(ray_box_clip({-2, 1.5, 0.5}, {1, 0, 0}, box));
  EXPECT_FALSE(ray_box_clip({-2, 0.5, 0.5}, {-1, 0, 0}, box));
}

TEST(Clip, InsideOriginClampsNear) {
  const SceneBox box;
  const auto hit = ray_box_clip({0.5, 0.5, 0.5}, {0, 0, 1}, box);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->near, 0.0);
  EXPECT_DOUBLE_EQ(hit->far, 0.5);
}

TEST(Clip, OutsideCameraLookingAtCentreHits) {
  const SceneBox box{{-1, -1, -1}, {1, 1, 1}};
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Vec3 eye{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n = norm(eye);
    for (auto& v : eye) v *= rng.uniform(1.8, 6.0) / n;
    if (box.contains(eye)) continue;
    const CameraFrame c = camera_at(eye, {0, 0, 0}, 9, 9);
    const std::size_t centre[1] = {4 * 9 + 4};
    RayBatch r = generate_rays(c, centre);
    clip_rays(r, box);
    EXPECT_TRUE(r.hit[0]);
    EXPECT_LT(r.near[0], r.far[0]);
  }
}

TEST(SceneBox, SingleCameraIsFrustumAabb) {
  const CameraFrame c = camera_at({0, 0, 4}, {0, 0, 0});
  const SceneBox box = compute_scene_box(std::span(&c, 1), 1.0, 5.0, true);
  const auto corners = frustum_corners(c, 1.0, 5.0);
  for (std::size_t k = 0; k < 3; ++k) {
    double lo = 1e9, hi = -1e9;
    for (const auto& p : corners) lo = std::min(lo, p[k]), hi = std::max(hi, p[k]);
    EXPECT_DOUBLE_EQ(box.min[k], lo);
    EXPECT_DOUBLE_EQ(box.max[k], hi);
  }
  EXPECT_THROW(compute_scene_box(std::span(&c, 1), 1.0, 5.0), DataError);
}

TEST(SceneBox, RingContainsOriginSeenByEveryCamera) {
  const auto cams = ring_cameras(RingSpec{}, 48, 48);
  for (const auto& c : cams) EXPECT_TRUE(in_frustum(c, {0, 0, 0}, 2.0, 6.0));
  const SceneBox box = compute_scene_box(cams, 2.0, 6.0);
  EXPECT_TRUE(box.contains({0, 0, 0}));
}

TEST(SceneBox, PermutationInvariant) {
  auto cams = ring_cameras(RingSpec{}, 48, 48);
  const SceneBox a = compute_scene_box(cams, 2.0, 6.0);
  std::reverse(cams.begin(), cams.end());
  std::rotate(cams.begin(), cams.begin() + 7, cams.end());
  const SceneBox b = compute_scene_box(cams, 2.0, 6.0);
  EXPECT_EQ(a.min, b.min);
  EXPECT_EQ(a.max, b.max);
}

TEST(SceneBox, GrowingFarPlaneNeverShrinks) {
  std::vector<CameraFrame> cams{camera_at({0, 0, 4}, {0, 0, 0}), camera_at({4, 0, 0}, {0, 0, 0}),
                                camera_at({0, 0.5, -4}, {0, 0, 0})};
  SceneBox prev = compute_scene_box(cams, 1.0, 4.5);
  for (double far = 5.0; far <= 12.0; far += 0.5) {
    const SceneBox b = compute_scene_box(cams, 1.0, far);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_LE(b.min[k], prev.min[k]);
      EXPECT_GE(b.max[k], prev.max[k]);
    }
    prev = b;
  }
}

TEST(SceneBox, DisjointFrustaRejected) {
  std::vector<CameraFrame> cams{camera_at({0, 0, 4}, {0, 0, 10}), camera_at({0, 0, -4}, {0, 0, -10})};
  try {
    compute_scene_box(cams, 0.5, 2.0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("pose"), std::string::npos);
  }
  EXPECT_THROW(compute_scene_box(cams, 3.0, 2.0), ConfigError);
}

TEST(Stratified, MidpointsWithoutJitter) {
  Rng rng(0);
  const SampleSet s = stratified_samples(0.0, 1.0, 2, false, rng);
  EXPECT_EQ(s.edges, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(s.points, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(s.deltas, (std::vector<double>{0.5, 0.5}));
}

TEST(Stratified, JitterStaysInBinsAndAveragesToCentres) {
  Rng rng(1);
  const int K = 4, draws = 100000;
  std::vector<double> mean(K, 0.0);
  for (int t = 0; t < draws; ++t) {
    const SampleSet s = stratified_samples(2.0, 3.0, K, true, rng);
    for (int i = 0; i < K; ++i) {
      const auto k = static_cast<std::size_t>(i);
      ASSERT_GE(s.points[k], s.edges[k]);
      ASSERT_LE(s.points[k], s.edges[k + 1]);
      mean[k] += s.points[k] / draws;
    }
  }
  for (int i = 0; i < K; ++i) EXPECT_NEAR(mean[static_cast<std::size_t>(i)], 2.0 + (i + 0.5) / K, 1e-2);
}

TEST(Stratified, RejectsBadArguments) {
  Rng rng(0);
  EXPECT_THROW(stratified_samples(1.0, 1.0, 4, false, rng), ConfigError);
  EXPECT_THROW(stratified_samples(0.0, 1.0, 0, false, rng), ConfigError);
}

std::vector<double> many_points(std::span<const double> edges, std::span<const double> w, int calls, int K, Rng& rng) {
  std::vector<double> pts;
  for (int c = 0; c < calls; ++c) {
    const SampleSet s = pdf_resample(edges, w, K, &rng);
    pts.insert(pts.end(), s.points.begin(), s.points.end());
  }
  return pts;
}

TEST(PdfResample, SinglePositiveBinConfinesSamples) {
  const std::vector<double> edges{0.0, 1.0, 2.0, 3.0, 4.0};
  const std::vector<double> w{0.0, 0.0, 0.7, 0.0};
  Rng rng(2);
  for (const double p : many_points(edges, w, 20, 16, rng)) {
    EXPECT_GE(p, 2.0);
    EXPECT_LE(p, 3.0);
  }
}

TEST(PdfResample, OneToThreeSplit) {
  const std::vector<double> edges{0.0, 0.5, 1.0};
  const std::vector<double> w{1.0, 3.0};
  Rng rng(3);
  const auto pts = many_points(edges, w, 100, 100, rng);
  const double left = static_cast<double>(std::count_if(pts.begin(), pts.end(), [](double p) { return p < 0.5; }));
  EXPECT_NEAR(left / static_cast<double>(pts.size()), 0.25, 0.02);
}

TEST(PdfResample, UniformWeightsPassKolmogorovSmirnov) {
  const std::vector<double> edges{0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
  const std::vector<double> w(8, 2.0);
  Rng rng(4);
  auto pts = many_points(edges, w, 100, 100, rng);
  std::sort(pts.begin(), pts.end());
  const double n = static_cast<double>(pts.size());
  double D = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    D = std::max({D, std::abs(pts[i] - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - pts[i])});
  EXPECT_LT(D, 1.36 / std::sqrt(n));
}

TEST(PdfResample, EdgesIncreaseWithinInterval) {
  Rng rng(5);
  for (int t = 0; t < 500; ++t) {
    const int Kp = 1 + static_cast<int>(rng.below(12));
    std::vector<double> edges{rng.uniform(0.0, 2.0)};
    for (int i = 0; i < Kp; ++i) edges.push_back(edges.back() + rng.uniform(0.01, 1.0));
    std::vector<double> w(static_cast<std::size_t>(Kp));
    for (auto& v : w) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    w[rng.below(w.size())] = 0.5;
    const SampleSet s = pdf_resample(edges, w, 1 + static_cast<int>(rng.below(40)), t % 2 ? &rng : nullptr);
    EXPECT_GE(s.edges.front(), edges.front());
    EXPECT_LE(s.edges.back(), edges.back());
    for (std::size_t i = 0; i + 1 < s.edges.size(); ++i) {
      EXPECT_LT(s.edges[i], s.edges[i + 1]);
      EXPECT_GT(s.deltas[i], 0.0);
    }
    EXPECT_EQ(s.points.size() + 1, s.edges.size());
  }
}

TEST(PdfResample, ZeroWeightsFallBackToUniform) {
  const std::vector<double> edges{0.0, 1.0, 2.0};
  const std::vector<double> w{0.0, 0.0};
  const SampleSet s = pdf_resample(edges, w, 3, nullptr);
  EXPECT_TRUE(s.fallback_uniform);
  ASSERT_EQ(s.edges.size(), 4u);
  for (std::size_t i = 0; i + 1 < s.edges.size(); ++i) EXPECT_NEAR(s.deltas[i], s.deltas[0], 1e-12);
  const std::vector<double> bad{1.0, -0.5};
  EXPECT_THROW(pdf_resample(edges, bad, 3, nullptr), NumericalError);
}

TEST(PoseFile, JsonRoundTripKeepsExtraKeys) {
  PoseFile p;
  p.fl_x = 40;
  p.fl_y = 41;
  p.cx = 16;
  p.cy = 12;
  p.w = 32;
  p.h = 24;
  CameraFrame c = camera_at({1, 2, 3}, {0, 0, 0});
  c.image_path = "images/a.hsc";
  p.frames = {c};
  p.extra["background"] = 1.0;
  const PoseFile back = parse_pose_json(pose_to_json(p));
  EXPECT_EQ(back.fl_x, 40);
  EXPECT_EQ(back.w, 32);
  ASSERT_EQ(back.frames.size(), 1u);
  EXPECT_EQ(back.frames[0].image_path, "images/a.hsc");
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(back.frames[0].camera_to_world[i], c.camera_to_world[i]);
  EXPECT_EQ(back.extra.at("background"), 1.0);
}

TEST(PoseFile, MalformedInputIsDataError) {
  EXPECT_THROW(parse_pose_json(nlohmann::json::parse(R"({"fl_x": 1})")), DataError);
  EXPECT_THROW(
      parse_pose_json(nlohmann::json::parse(
          R"({"fl_x":1,"fl_y":1,"cx":1,"cy":1,"w":2,"h":2,"frames":[{"file_path":"a","transform_matrix":[[1,0,0]]}]})")),
      DataError);
  EXPECT_THROW(read_pose_file("/nonexistent/poses.json"), DataError);
}

}  // namespace
}  // namespace hsnerf
