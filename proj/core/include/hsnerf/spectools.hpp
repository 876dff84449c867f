#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hsnerf/dataio.hpp"

namespace hsnerf {

/// Index of the channel nearest to lambda_nm (lowest index on ties). The
/// wavelength must lie inside the channel range.
std::size_t nearest_channel(std::span<const double> wavelengths, double lambda_nm);

/// H x W x 3 image copying the channels nearest to the three bands.
std::vector<double> pseudo_rgb_fixed(const HyperCube& cube, double r_nm = 622.0, double g_nm = 555.0,
                                     double b_nm = 503.0);

/// Linear map from N spectral channels to RGB, stored as three N-rows.
struct SpectralResponse {
  std::vector<double> wavelengths;
  std::array<std::vector<double>, 3> rows;

  std::size_t channels() const { return wavelengths.size(); }
  void validate() const;
};

inline constexpr double kResponseRidge = 1e-8;

/// Least squares fit of rgb ~ A * hs through the ridge-regularized normal
/// equations. hs: n x N (row-major), rgb: n x 3. When mask is non-empty only
/// samples with mask[i] != 0 are used.
SpectralResponse fit_linear_map(std::span<const double> hs, std::span<const double> rgb, std::size_t channels,
                                std::span<const double> wavelengths, std::span<const std::uint8_t> mask = {},
                                double ridge = kResponseRidge);

/// Per-pixel A * spectrum, without clamping; H x W x 3.
std::vector<double> simulate_sensor_linear(const HyperCube& cube, const SpectralResponse& response);
/// Same, clamped to [0,1].
std::vector<double> simulate_sensor(const HyperCube& cube, const SpectralResponse& response);

/// CSV: header wavelength_nm,r,g,b and one row per channel.
void write_response_csv(const SpectralResponse& response, const std::filesystem::path& path);
SpectralResponse read_response_csv(const std::filesystem::path& path);

struct WavelengthSplit {
  std::vector<std::size_t> train;     // channel indices
  std::vector<std::size_t> held_out;
};

/// keep evenly spaced channels at round(i * N / keep); the rest are held out.
WavelengthSplit superres_split(std::size_t n_channels, std::size_t keep);

}  // namespace hsnerf
