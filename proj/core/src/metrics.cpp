#include "hsnerf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "hsnerf/error.hpp"

namespace hsnerf {

double psnr(std::span<const double> a, std::span<const double> b, double max_value) {
  if (a.size() != b.size()) throw ShapeError("psnr: image sizes differ");
  if (a.empty()) throw ShapeError("psnr: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> g(kWin);
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Separable valid-mode filter: [h, w] -> [h-10, w-10].
std::vector<double> filter(const std::vector<double>& x, int h, int w, const std::vector<double>& g) {
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(r * w + c + k)];
      tmp[static_cast<std::size_t>(r * ow + c)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((r + k) * ow + c)];
      out[static_cast<std::size_t>(r * ow + c)] = s;
    }
  return out;
}

}  // namespace

double ssim(std::span<const double> a, std::span<const double> b, int height, int width) {
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw ShapeError("ssim: image sizes differ from " + std::to_string(height) + "x" + std::to_string(width));
  if (height < kWin || width < kWin) throw ShapeError("ssim: images must be at least 11x11");
  const auto g = gaussian_window();
  const std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter(x, height, width, g), my = filter(y, height, width, g);
  const auto sxx = filter(xx, height, width, g), syy = filter(yy, height, width, g), sxy = filter(xy, height, width, g);
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

std::vector<double> channel_plane(const HyperCube& cube, std::size_t channel) {
  if (channel >= cube.channels()) throw DataError("channel index out of range");
  std::vector<double> out(cube.pixels());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = cube.data[p * cube.channels() + channel];
  return out;
}

SpectrumMetrics spectrum_metrics(const HyperCube& predicted, const HyperCube& target) {
  if (predicted.height != target.height || predicted.width != target.width ||
      predicted.channels() != target.channels())
    throw ShapeError("spectrum_metrics: cube shapes differ");
  for (std::size_t c = 0; c < target.channels(); ++c)
    if (std::abs(predicted.wavelengths[c] - target.wavelengths[c]) > 1e-6)
      throw DataError("spectrum_metrics: wavelength axes differ");
  SpectrumMetrics m;
  m.wavelengths = target.wavelengths;
  for (std::size_t c = 0; c < target.channels(); ++c) {
    const auto a = channel_plane(predicted, c), b = channel_plane(target, c);
    m.psnr.push_back(psnr(a, b));
    m.ssim.push_back(ssim(a, b, target.height, target.width));
    m.mean_psnr += m.psnr.back();
    m.mean_ssim += m.ssim.back();
  }
  m.mean_psnr /= static_cast<double>(target.channels());
  m.mean_ssim /= static_cast<double>(target.channels());
  return m;
}

void write_metrics_csv(const SpectrumMetrics& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write metrics: " + path.string());
  os << "wavelength_nm,psnr_db,ssim\n";
  char buf[128];
  for (std::size_t c = 0; c < m.wavelengths.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6f,%.6f\n", m.wavelengths[c], m.psnr[c], m.ssim[c]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f\n", m.mean_psnr, m.mean_ssim);
  os << buf;
}

}  // namespace hsnerf
