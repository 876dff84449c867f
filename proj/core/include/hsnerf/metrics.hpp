#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "hsnerf/dataio.hpp"

namespace hsnerf {

/// Value returned by psnr for identical images.
inline constexpr double kPsnrCap = 99.0;

double psnr(std::span<const double> a, std::span<const double> b, double max_value = 1.0);

/// Single-scale SSIM of two height x width planes: 11x11 Gaussian window with
/// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over valid
/// window positions.
double ssim(std::span<const double> a, std::span<const double> b, int height, int width);

struct SpectrumMetrics {
  std::vector<double> wavelengths;
  std::vector<double> psnr;
  std::vector<double> ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// Per-channel PSNR and SSIM with means over channels.
SpectrumMetrics spectrum_metrics(const HyperCube& predicted, const HyperCube& target);

/// CSV with header wavelength_nm,psnr_db,ssim and a final "mean" row.
void write_metrics_csv(const SpectrumMetrics& m, const std::filesystem::path& path);

/// Channel plane c of a cube as doubles.
std::vector<double> channel_plane(const HyperCube& cube, std::size_t channel);

}  // namespace hsnerf
