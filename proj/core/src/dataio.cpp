#include "hsnerf/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "hsnerf/binary_io.hpp"
#include "hsnerf/error.hpp"

namespace hsnerf {

HyperCube::HyperCube(int h, int w, std::vector<double> lambdas, float fill)
    : height(h), width(w), wavelengths(std::move(lambdas)) {
  data.assign(pixels() * channels(), fill);
}

void HyperCube::validate() const {
  if (height <= 0 || width <= 0 || wavelengths.empty()) throw DataError("hypercube: empty dimensions");
  if (data.size() != pixels() * channels())
    throw DataError("hypercube: data holds " + std::to_string(data.size()) + " values, expected " +
                    std::to_string(pixels() * channels()));
  for (std::size_t i = 1; i < wavelengths.size(); ++i)
    if (!(wavelengths[i] > wavelengths[i - 1])) throw DataError("hypercube: wavelengths must be strictly ascending");
  for (float v : data)
    if (!std::isfinite(v)) throw DataError("hypercube: non-finite intensity");
}

// -------------------------------------------------------------------- HSC1

void write_cube(const HyperCube& cube, const std::filesystem::path& path) {
  cube.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write cube: " + path.string());
  binio::write_bytes(os, "HSC1");
  binio::write_u32(os, static_cast<std::uint32_t>(cube.height));
  binio::write_u32(os, static_cast<std::uint32_t>(cube.width));
  binio::write_u32(os, static_cast<std::uint32_t>(cube.channels()));
  for (double w : cube.wavelengths) binio::write_f32(os, static_cast<float>(w));
  for (float v : cube.data) binio::write_f32(os, v);
  if (!os) throw DataError("failed writing cube: " + path.string());
}

HyperCube read_cube(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open cube: " + path.string());
  const std::string what = "cube " + path.filename().string();
  if (binio::read_bytes(is, 4, what) != "HSC1") throw DataError(what + ": bad magic (expected HSC1)");
  const auto H = binio::read_u32(is, what);
  const auto W = binio::read_u32(is, what);
  const auto N = binio::read_u32(is, what);
  if (H == 0 || W == 0 || N == 0) throw DataError(what + ": zero dimension");
  HyperCube cube;
  cube.height = static_cast<int>(H);
  cube.width = static_cast<int>(W);
  cube.wavelengths.resize(N);
  for (auto& w : cube.wavelengths) w = binio::read_f32(is, what);
  for (std::size_t i = 1; i < N; ++i)
    if (!(cube.wavelengths[i] > cube.wavelengths[i - 1]))
      throw DataError(what + ": wavelengths are not strictly ascending");
  const std::size_t n = static_cast<std::size_t>(H) * W * N;
  const std::string payload = binio::read_bytes(is, n * 4, what);
  cube.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(payload[i * 4 + static_cast<std::size_t>(b)]);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw DataError(what + ": non-finite intensity");
    cube.data[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return cube;
}

// ------------------------------------------------------------ preprocessing

namespace {
void require_mask(const HyperCube& cube, const Mask& mask) {
  if (mask.height != cube.height || mask.width != cube.width || mask.size() != cube.pixels())
    throw DataError("mask size " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                    " does not match cube " + std::to_string(cube.height) + "x" + std::to_string(cube.width));
}
}  // namespace

HyperCube fill_background(const HyperCube& cube, const Mask& mask, float fill_value) {
  require_mask(cube, mask);
  HyperCube out = cube;
  const std::size_t N = cube.channels();
  for (std::size_t p = 0; p < cube.pixels(); ++p)
    if (mask.background(p)) std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(p * N), N, fill_value);
  return out;
}

std::size_t select_grayscale_channel(const HyperCube& cube, const Mask& mask) {
  require_mask(cube, mask);
  const std::size_t N = cube.channels();
  std::size_t count = 0;
  for (std::size_t p = 0; p < cube.pixels(); ++p) count += mask.background(p) ? 0 : 1;
  if (count < 2) throw DataError("select_grayscale_channel: need at least two foreground pixels");
  std::size_t best = 0;
  double best_var = -1.0;
  for (std::size_t c = 0; c < N; ++c) {
    // Welford running variance.
    double mean = 0.0, m2 = 0.0;
    std::size_t k = 0;
    for (std::size_t p = 0; p < cube.pixels(); ++p) {
      if (mask.background(p)) continue;
      const double x = cube.data[p * N + c];
      ++k;
      const double d = x - mean;
      mean += d / static_cast<double>(k);
      m2 += d * (x - mean);
    }
    const double var = m2 / static_cast<double>(k);
    if (var > best_var) {
      best_var = var;
      best = c;
    }
  }
  return best;
}

Mask threshold_mask(const HyperCube& cube, std::size_t channel, float threshold, bool above) {
  if (channel >= cube.channels()) throw DataError("threshold_mask: channel out of range");
  Mask m(cube.height, cube.width);
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    const float v = cube.data[p * cube.channels() + channel];
    m.values[p] = (above ? v > threshold : v < threshold) ? 1 : 0;
  }
  return m;
}

// ------------------------------------------------------------------ netpbm

namespace {

struct Netpbm {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::string pixels;
};

void write_netpbm(const std::filesystem::path& path, const char* magic, int width, int height, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write raster: " + path.string());
  os << magic << '\n' << width << ' ' << height << "\n255\n";
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing raster: " + path.string());
}

long read_header_int(std::istream& is, const std::string& what) {
  is >> std::ws;
  while (is.peek() == '#') {
    std::string line;
    std::getline(is, line);
    is >> std::ws;
  }
  long v = -1;
  if (!(is >> v)) throw DataError(what + ": malformed header");
  return v;
}

Netpbm read_netpbm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open raster: " + path.string());
  const std::string what = "raster " + path.filename().string();
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  Netpbm img;
  if (magic == "P5") img.channels = 1;
  else if (magic == "P6") img.channels = 3;
  else throw DataError(what + ": only binary PGM (P5) and PPM (P6) are supported");
  img.width = static_cast<int>(read_header_int(is, what));
  img.height = static_cast<int>(read_header_int(is, what));
  const long maxval = read_header_int(is, what);
  if (img.width <= 0 || img.height <= 0 || maxval != 255) throw DataError(what + ": expected 8-bit raster");
  is.get();
  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) *
                        static_cast<std::size_t>(img.channels);
  img.pixels.resize(n);
  is.read(img.pixels.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw DataError(what + ": truncated file");
  return img;
}

}  // namespace

void write_mask(const Mask& mask, const std::filesystem::path& path) {
  std::string bytes(mask.size(), '\0');
  for (std::size_t p = 0; p < mask.size(); ++p) bytes[p] = static_cast<char>(mask.background(p) ? 255 : 0);
  write_netpbm(path, "P5", mask.width, mask.height, bytes);
}

Mask read_mask(const std::filesystem::path& path) {
  const Netpbm img = read_netpbm(path);
  if (img.channels != 1) throw DataError("mask " + path.string() + " must be single-channel");
  Mask m(img.height, img.width);
  for (std::size_t p = 0; p < m.size(); ++p) m.values[p] = static_cast<unsigned char>(img.pixels[p]) >= 128 ? 1 : 0;
  return m;
}

void write_rgb(std::span<const double> rgb, int height, int width, const std::filesystem::path& path) {
  const std::size_t n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3;
  if (rgb.size() != n) throw DataError("write_rgb: expected " + std::to_string(n) + " values");
  std::string bytes(n, '\0');
  for (std::size_t i = 0; i < n; ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0)));
  write_netpbm(path, "P6", width, height, bytes);
}

std::vector<double> read_rgb(const std::filesystem::path& path, int& height, int& width) {
  const Netpbm img = read_netpbm(path);
  if (img.channels != 3) throw DataError("raster " + path.string() + " is not RGB");
  height = img.height;
  width = img.width;
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<unsigned char>(img.pixels[i]) / 255.0;
  return out;
}

// ----------------------------------------------------------------- dataset

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.root = root;
  ds.poses = read_pose_file(root / "poses.json");
  if (ds.poses.frames.empty()) throw DataError("dataset " + root.string() + " has no frames");
  for (const auto& frame : ds.poses.frames) {
    HyperCube cube = read_cube(root / frame.image_path);
    if (cube.height != frame.height || cube.width != frame.width)
      throw DataError("cube " + frame.image_path + " size does not match the pose file");
    if (!ds.cubes.empty() && cube.wavelengths != ds.cubes.front().wavelengths)
      throw DataError("cube " + frame.image_path + " has a different wavelength axis");
    ds.cubes.push_back(std::move(cube));
  }
  ds.wavelengths = ds.cubes.front().wavelengths;
  const auto& extra = ds.poses.extra;
  ds.background.assign(ds.channels(), 0.0);
  if (extra.contains("background")) {
    const auto& bg = extra.at("background");
    if (bg.is_number()) {
      ds.background.assign(ds.channels(), bg.get<double>());
    } else {
      ds.background = bg.get<std::vector<double>>();
      if (ds.background.size() != ds.channels())
        throw DataError("pose file background has " + std::to_string(ds.background.size()) + " entries for " +
                        std::to_string(ds.channels()) + " channels");
    }
  }
  if (extra.contains("depth_range")) {
    const auto dr = extra.at("depth_range").get<std::vector<double>>();
    if (dr.size() != 2) throw DataError("depth_range must be [d_min, d_max]");
    ds.depth_range = {dr[0], dr[1]};
  }
  ds.box = compute_scene_box(ds.poses.frames, ds.depth_range[0], ds.depth_range[1], ds.poses.frames.size() == 1);
  return ds;
}

}  // namespace hsnerf
