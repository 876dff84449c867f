#include "hsnerf/spectools.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "hsnerf/error.hpp"

namespace hsnerf {

std::size_t nearest_channel(std::span<const double> wavelengths, double lambda_nm) {
  if (wavelengths.empty()) throw DataError("nearest_channel: no channels");
  if (lambda_nm < wavelengths.front() - 1e-6 || lambda_nm > wavelengths.back() + 1e-6)
    throw DataError("wavelength " + std::to_string(lambda_nm) + " nm lies outside the cube range [" +
                    std::to_string(wavelengths.front()) + ", " + std::to_string(wavelengths.back()) + "]");
  std::size_t best = 0;
  for (std::size_t c = 1; c < wavelengths.size(); ++c)
    if (std::abs(wavelengths[c] - lambda_nm) < std::abs(wavelengths[best] - lambda_nm)) best = c;
  return best;
}

std::vector<double> pseudo_rgb_fixed(const HyperCube& cube, double r_nm, double g_nm, double b_nm) {
  const std::size_t ch[3] = {nearest_channel(cube.wavelengths, r_nm), nearest_channel(cube.wavelengths, g_nm),
                             nearest_channel(cube.wavelengths, b_nm)};
  std::vector<double> out(cube.pixels() * 3);
  for (std::size_t p = 0; p < cube.pixels(); ++p)
    for (std::size_t k = 0; k < 3; ++k) out[p * 3 + k] = cube.data[p * cube.channels() + ch[k]];
  return out;
}

void SpectralResponse::validate() const {
  for (const auto& r : rows) {
    if (r.size() != wavelengths.size()) throw DataError("spectral response rows must have one entry per channel");
    for (double v : r)
      if (!std::isfinite(v)) throw DataError("spectral response has non-finite entries");
  }
}

SpectralResponse fit_linear_map(std::span<const double> hs, std::span<const double> rgb, std::size_t channels,
                                std::span<const double> wavelengths, std::span<const std::uint8_t> mask, double ridge) {
  if (channels == 0 || hs.size() % channels != 0) throw ShapeError("fit_linear_map: hs is not n x N");
  const std::size_t n = hs.size() / channels;
  if (rgb.size() != n * 3) throw ShapeError("fit_linear_map: rgb must be n x 3 with the same n as hs");
  if (!mask.empty() && mask.size() != n) throw ShapeError("fit_linear_map: mask must have one entry per sample");
  if (wavelengths.size() != channels) throw ShapeError("fit_linear_map: need one wavelength per channel");
  const auto N = static_cast<Eigen::Index>(channels);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(N, N);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(N, 3);
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    ++used;
    const Eigen::Map<const Eigen::VectorXd> x(hs.data() + i * channels, N);
    const Eigen::Map<const Eigen::RowVector3d> y(rgb.data() + i * 3);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
    rhs.noalias() += x * y;
  }
  if (used == 0) throw DataError("fit_linear_map: no samples to fit");
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd at = gram.ldlt().solve(rhs);  // N x 3
  if (!at.allFinite()) throw NumericalError("fit_linear_map: solution is not finite");
  SpectralResponse r;
  r.wavelengths.assign(wavelengths.begin(), wavelengths.end());
  for (std::size_t k = 0; k < 3; ++k) {
    r.rows[k].resize(channels);
    for (std::size_t c = 0; c < channels; ++c)
      r.rows[k][c] = at(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k));
  }
  return r;
}

std::vector<double> simulate_sensor_linear(const HyperCube& cube, const SpectralResponse& response) {
  response.validate();
  if (response.channels() != cube.channels())
    throw DataError("simulate_sensor: response has " + std::to_string(response.channels()) + " channels, cube has " +
                    std::to_string(cube.channels()));
  const std::size_t N = cube.channels();
  std::vector<double> out(cube.pixels() * 3, 0.0);
  for (std::size_t p = 0; p < cube.pixels(); ++p)
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < N; ++c) s += response.rows[k][c] * cube.data[p * N + c];
      out[p * 3 + k] = s;
    }
  return out;
}

std::vector<double> simulate_sensor(const HyperCube& cube, const SpectralResponse& response) {
  auto out = simulate_sensor_linear(cube, response);
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void write_response_csv(const SpectralResponse& response, const std::filesystem::path& path) {
  response.validate();
  std::ofstream os(path);
  if (!os) throw DataError("cannot write response: " + path.string());
  os << "wavelength_nm,r,g,b\n";
  char buf[160];
  for (std::size_t c = 0; c < response.channels(); ++c) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", response.wavelengths[c], response.rows[0][c],
                  response.rows[1][c], response.rows[2][c]);
    os << buf;
  }
}

SpectralResponse read_response_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open response: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("wavelength_nm,r,g,b", 0) != 0)
    throw DataError(path.string() + ": expected header wavelength_nm,r,g,b");
  SpectralResponse r;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v[4];
    char comma;
    if (!(ls >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3]))
      throw DataError(path.string() + ": malformed row '" + line + "'");
    r.wavelengths.push_back(v[0]);
    for (std::size_t k = 0; k < 3; ++k) r.rows[k].push_back(v[k + 1]);
  }
  if (r.wavelengths.empty()) throw DataError(path.string() + ": no rows");
  r.validate();
  return r;
}

WavelengthSplit superres_split(std::size_t n_channels, std::size_t keep) {
  if (keep < 1 || keep > n_channels) throw ConfigError("superres_split: keep must be in [1, N]");
  WavelengthSplit s;
  std::vector<bool> is_train(n_channels, false);
  for (std::size_t i = 0; i < keep; ++i) {
    const auto idx = static_cast<std::size_t>(std::lround(static_cast<double>(i) * static_cast<double>(n_channels) /
                                                          static_cast<double>(keep)));
    is_train[std::min(idx, n_channels - 1)] = true;
  }
  for (std::size_t c = 0; c < n_channels; ++c) (is_train[c] ? s.train : s.held_out).push_back(c);
  return s;
}

}  // namespace hsnerf
