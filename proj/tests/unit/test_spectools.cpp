#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "hsnerf/error.hpp"
#include "hsnerf/rng.hpp"
#include "hsnerf/spectools.hpp"
#include "hsnerf/synthetic.hpp"

namespace hsnerf {
namespace {

namespace fs = std::filesystem;

HyperCube random_cube(int h, int w, const std::vector<double>& lams, Rng& rng) {
  HyperCube c(h, w, lams);
  for (auto& v : c.data) v = static_cast<float>(rng.uniform());
  return c;
}

SpectralResponse random_response(const std::vector<double>& lams, Rng& rng) {
  SpectralResponse r;
  r.wavelengths = lams;
  for (auto& row : r.rows) {
    row.resize(lams.size());
    for (auto& v : row) v = rng.uniform(-0.5, 0.5);
  }
  return r;
}

std::vector<double> as_samples(const HyperCube& c) { return {c.data.begin(), c.data.end()}; }

double max_rel(const SpectralResponse& a, const SpectralResponse& b) {
  double num = 0.0, den = 0.0;
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < a.channels(); ++i) {
      num = std::max(num, std::abs(a.rows[k][i] - b.rows[k][i]));
      den = std::max(den, std::abs(b.rows[k][i]));
    }
  return num / std::max(den, 1e-300);
}

TEST(NearestChannel, MatchesBruteForce) {
  Rng rng(1);
  const std::vector<double> lams{410.0, 433.5, 470.0, 471.0, 560.0, 700.0};
  for (int t = 0; t < 2000; ++t) {
    const double l = rng.uniform(410.0, 700.0);
    std::size_t best = 0;
    for (std::size_t i = 1; i < lams.size(); ++i)
      if (std::abs(lams[i] - l) < std::abs(lams[best] - l)) best = i;
    EXPECT_EQ(nearest_channel(lams, l), best);
  }
  EXPECT_EQ(nearest_channel(std::vector<double>{500.0, 600.0}, 550.0), 0u);
  EXPECT_THROW(nearest_channel(lams, 300.0), DataError);
  EXPECT_THROW(nearest_channel(std::vector<double>{}, 500.0), DataError);
}

TEST(PseudoRgb, CopiesNearestChannels) {
  Rng rng(2);
  const auto lams = channel_grid(450, 850, 16);
  const HyperCube c = random_cube(5, 4, lams, rng);
  const auto rgb = pseudo_rgb_fixed(c);
  ASSERT_EQ(rgb.size(), c.pixels() * 3);
  const std::size_t idx[3] = {nearest_channel(lams, 622.0), nearest_channel(lams, 555.0),
                              nearest_channel(lams, 503.0)};
  for (std::size_t p = 0; p < c.pixels(); ++p)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(rgb[p * 3 + k], static_cast<double>(c.spectrum(p)[idx[k]]));
  const HyperCube one = random_cube(3, 3, {600.0}, rng);
  const auto grey = pseudo_rgb_fixed(one, 600.0, 600.0, 600.0);
  for (std::size_t p = 0; p < 9; ++p) {
    EXPECT_EQ(grey[p * 3], grey[p * 3 + 1]);
    EXPECT_EQ(grey[p * 3], grey[p * 3 + 2]);
  }
  EXPECT_THROW(pseudo_rgb_fixed(one), DataError);
}

TEST(LinearMap, RecoversTrueResponse) {
  Rng rng(3);
  const auto lams = channel_grid(400, 900, 16);
  const HyperCube c = random_cube(20, 15, lams, rng);
  const SpectralResponse truth = random_response(lams, rng);
  const auto rgb = simulate_sensor_linear(c, truth);
  const SpectralResponse fit = fit_linear_map(as_samples(c), rgb, 16, lams);
  EXPECT_LT(max_rel(fit, truth), 1e-6);
  EXPECT_EQ(fit.wavelengths, lams);
}

TEST(LinearMap, OneHotResponse) {
  Rng rng(4);
  const auto lams = channel_grid(450, 850, 8);
  const HyperCube c = random_cube(10, 10, lams, rng);
  std::vector<double> rgb(c.pixels() * 3);
  for (std::size_t p = 0; p < c.pixels(); ++p)
    for (int k = 0; k < 3; ++k) rgb[p * 3 + k] = c.spectrum(p)[2 * k + 1];
  const SpectralResponse fit = fit_linear_map(as_samples(c), rgb, 8, lams);
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 8; ++i)
      EXPECT_NEAR(fit.rows[k][i], i == static_cast<std::size_t>(2 * k + 1) ? 1.0 : 0.0, 1e-6);
}

TEST(LinearMap, DuplicationAndLinearity) {
  Rng rng(5);
  const auto lams = channel_grid(450, 850, 6);
  const HyperCube c = random_cube(8, 8, lams, rng);
  const SpectralResponse a = random_response(lams, rng), b = random_response(lams, rng);
  std::vector<double> noise(c.pixels() * 3);
  for (auto& v : noise) v = rng.uniform(-0.05, 0.05);
  auto rgb_of = [&](const SpectralResponse& r) {
    auto y = simulate_sensor_linear(c, r);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += noise[i];
    return y;
  };
  const auto hs = as_samples(c);
  const auto ya = rgb_of(a);
  const SpectralResponse fa = fit_linear_map(hs, ya, 6, lams);

  std::vector<double> hs2 = hs, ya2 = ya;
  hs2.insert(hs2.end(), hs.begin(), hs.end());
  ya2.insert(ya2.end(), ya.begin(), ya.end());
  EXPECT_LT(max_rel(fit_linear_map(hs2, ya2, 6, lams), fa), 1e-6);

  SpectralResponse sum = a;
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 6; ++i) sum.rows[k][i] = 2.0 * a.rows[k][i] - 3.0 * b.rows[k][i];
  const auto yb = simulate_sensor_linear(c, b);
  std::vector<double> ys(ya.size());
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = 2.0 * ya[i] - 3.0 * yb[i];
  const SpectralResponse fb = fit_linear_map(hs, yb, 6, lams);
  const SpectralResponse fs_ = fit_linear_map(hs, ys, 6, lams);
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 6; ++i)
      EXPECT_NEAR(fs_.rows[k][i], 2.0 * fa.rows[k][i] - 3.0 * fb.rows[k][i], 1e-9);
}

TEST(LinearMap, MaskSelectsSamplesAndZeroTargetGivesZero) {
  Rng rng(6);
  const auto lams = channel_grid(450, 850, 5);
  const HyperCube c = random_cube(12, 12, lams, rng);
  const SpectralResponse truth = random_response(lams, rng);
  auto rgb = simulate_sensor_linear(c, truth);
  std::vector<std::uint8_t> mask(c.pixels(), 1);
  for (std::size_t p = 0; p < c.pixels(); p += 3) {
    mask[p] = 0;
    for (int k = 0; k < 3; ++k) rgb[p * 3 + k] = 7.0;
  }
  EXPECT_LT(max_rel(fit_linear_map(as_samples(c), rgb, 5, lams, mask), truth), 1e-6);
  const std::vector<double> zeros(rgb.size(), 0.0);
  const SpectralResponse z = fit_linear_map(as_samples(c), zeros, 5, lams);
  for (const auto& row : z.rows)
    for (double v : row) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fit_linear_map(as_samples(c), rgb, 4, lams), ShapeError);
  EXPECT_THROW(fit_linear_map(as_samples(c), rgb, 5, lams, std::vector<std::uint8_t>(c.pixels(), 0)), DataError);
}

TEST(Sensor, ClosedLoopResidualAndClamping) {
  Rng rng(7);
  const auto lams = channel_grid(450, 850, 10);
  const HyperCube c = random_cube(9, 11, lams, rng);
  SpectralResponse truth = random_response(lams, rng);
  for (auto& row : truth.rows)
    for (auto& v : row) v = std::abs(v) / 5.0;
  const auto rgb = simulate_sensor(c, truth);
  const SpectralResponse fit = fit_linear_map(as_samples(c), rgb, 10, lams);
  const auto again = simulate_sensor(c, fit);
  double rms = 0.0;
  for (std::size_t i = 0; i < rgb.size(); ++i) rms += std::pow(again[i] - rgb[i], 2);
  EXPECT_LT(std::sqrt(rms / rgb.size()), 1e-6);

  SpectralResponse hot = truth;
  for (auto& row : hot.rows)
    for (auto& v : row) v = 1.0;
  for (double v : simulate_sensor(c, hot)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const HyperCube other = random_cube(2, 2, channel_grid(450, 850, 4), rng);
  EXPECT_THROW(simulate_sensor(other, truth), DataError);
}

TEST(Sensor, ResponseCsvRoundTripIsExact) {
  Rng rng(8);
  const auto lams = channel_grid(401.25, 899.75, 13);
  const SpectralResponse r = random_response(lams, rng);
  const fs::path dir = fs::temp_directory_path() / "hsnerf_spectools_csv";
  fs::create_directories(dir);
  write_response_csv(r, dir / "a.csv");
  const SpectralResponse b = read_response_csv(dir / "a.csv");
  EXPECT_EQ(b.wavelengths, r.wavelengths);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(b.rows[k], r.rows[k]);
  EXPECT_THROW(read_response_csv(dir / "missing.csv"), DataError);
}

TEST(SuperresSplit, EvenlySpacedAndDisjoint) {
  const WavelengthSplit all = superres_split(16, 16);
  EXPECT_EQ(all.train.size(), 16u);
  EXPECT_TRUE(all.held_out.empty());
  const WavelengthSplit half = superres_split(128, 64);
  ASSERT_EQ(half.train.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(half.train[i], 2 * i);
  for (std::size_t n : {7u, 16u, 31u})
    for (std::size_t keep = 1; keep <= n; ++keep) {
      const WavelengthSplit s = superres_split(n, keep);
      std::set<std::size_t> u(s.train.begin(), s.train.end());
      EXPECT_EQ(u.size(), keep);
      for (std::size_t h : s.held_out) EXPECT_TRUE(u.insert(h).second);
      EXPECT_EQ(u.size(), n);
      EXPECT_EQ(*u.rbegin(), n - 1);
    }
  EXPECT_THROW(superres_split(8, 0), ConfigError);
  EXPECT_THROW(superres_split(8, 9), ConfigError);
}

}  // namespace
}  // namespace hsnerf
