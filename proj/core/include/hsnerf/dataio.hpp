#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hsnerf/sampling.hpp"

namespace hsnerf {

/// H x W x N intensities in [0,1], row-major (row, column, channel).
struct HyperCube {
  int height = 0;
  int width = 0;
  std::vector<double> wavelengths;  // nm, strictly increasing
  std::vector<float> data;

  HyperCube() = default;
  HyperCube(int h, int w, std::vector<double> lambdas, float fill = 0.0f);

  std::size_t channels() const { return wavelengths.size(); }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  float& at(std::size_t row, std::size_t col, std::size_t ch) { return data[(row * width + col) * channels() + ch]; }
  float at(std::size_t row, std::size_t col, std::size_t ch) const { return data[(row * width + col) * channels() + ch]; }
  /// Spectrum of pixel p (= row * width + col).
  std::span<const float> spectrum(std::size_t p) const { return {data.data() + p * channels(), channels()}; }

  /// Throws DataError on inconsistent sizes, unsorted wavelengths or
  /// non-finite intensities.
  void validate() const;
};

/// HSC1 layout: "HSC1", u32 H, W, N, N x f32 wavelengths, H*W*N x f32 data,
/// all little-endian.
void write_cube(const HyperCube& cube, const std::filesystem::path& path);
/// Intensities are clamped to [0,1] on load.
HyperCube read_cube(const std::filesystem::path& path);

/// H x W background mask; nonzero = background.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int h, int w, bool fill = false)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill ? 1 : 0) {}
  bool background(std::size_t p) const { return values[p] != 0; }
  std::size_t size() const { return values.size(); }
};

/// Sets every channel of background pixels to fill_value.
HyperCube fill_background(const HyperCube& cube, const Mask& mask, float fill_value);

/// Channel with the largest foreground intensity variance; ties go to the
/// lowest index. Needs at least two foreground pixels.
std::size_t select_grayscale_channel(const HyperCube& cube, const Mask& mask);

/// Background where channel intensity is below (or, with above = true,
/// above) the threshold.
Mask threshold_mask(const HyperCube& cube, std::size_t channel, float threshold, bool above = false);

/// Masks on disk are binary PGM (P5) rasters: 255 = background, 0 = foreground.
void write_mask(const Mask& mask, const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);

/// 8-bit RGB raster written as binary PPM (P6); values in [0,1], row-major
/// H x W x 3.
void write_rgb(std::span<const double> rgb, int height, int width, const std::filesystem::path& path);
std::vector<double> read_rgb(const std::filesystem::path& path, int& height, int& width);

/// A dataset directory: poses.json plus the HSC1 cubes it references.
/// Optional pose-file keys: "background" (scalar or per-channel list) and
/// "depth_range" ([d_min, d_max], default [0.1, 10]).
struct Dataset {
  std::filesystem::path root;
  PoseFile poses;
  std::vector<HyperCube> cubes;
  std::vector<double> wavelengths;
  std::vector<double> background;  // per channel
  std::array<double, 2> depth_range{0.1, 10.0};
  SceneBox box;

  std::size_t size() const { return cubes.size(); }
  std::size_t channels() const { return wavelengths.size(); }
};

Dataset load_dataset(const std::filesystem::path& root);

}  // namespace hsnerf
