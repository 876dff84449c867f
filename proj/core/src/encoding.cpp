#include "hsnerf/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "hsnerf/error.hpp"

namespace hsnerf {

// ------------------------------------------------------- SinusoidalEncoding

SinusoidalEncoding::SinusoidalEncoding(int n_terms, double domain_min, double domain_max)
    : n_terms_(n_terms), min_(domain_min), max_(domain_max) {
  if (n_terms < 1) throw ConfigError("sinusoidal encoding needs at least one term");
  if (!(domain_max > domain_min) || !std::isfinite(domain_min) || !std::isfinite(domain_max))
    throw ConfigError("sinusoidal encoding: degenerate domain [" + std::to_string(domain_min) + ", " +
                      std::to_string(domain_max) + "]");
}

std::vector<double> SinusoidalEncoding::encode(double x) const {
  const double u = std::clamp((x - min_) / (max_ - min_), 0.0, 1.0);
  std::vector<double> out(output_dim());
  double freq = std::numbers::pi;
  for (int k = 0; k < n_terms_; ++k, freq *= 2.0) {
    out[2 * static_cast<std::size_t>(k)] = std::sin(freq * u);
    out[2 * static_cast<std::size_t>(k) + 1] = std::cos(freq * u);
  }
  return out;
}

Tensor SinusoidalEncoding::encode_batch(std::span<const double> xs) const {
  const std::size_t w = output_dim();
  Tensor out({xs.size(), w});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto row = encode(xs[i]);
    std::copy(row.begin(), row.end(), out.ptr() + i * w);
  }
  return out;
}

Tensor encode_directions(const Tensor& directions, int n_terms) {
  if (directions.ndim() != 2 || directions.cols() != 3)
    throw ShapeError("encode_directions: expected [n,3], got " + shape_str(directions.shape()));
  const SinusoidalEncoding enc(n_terms, -1.0, 1.0);
  const std::size_t n = directions.rows(), w = enc.output_dim();
  Tensor out({n, 3 * w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const auto e = enc.encode(directions.at(i, c));
      std::copy(e.begin(), e.end(), out.ptr() + i * 3 * w + c * w);
    }
  return out;
}

// ------------------------------------------------------------- GridConfig

void GridConfig::validate() const {
  if (levels < 1 || base_resolution < 1 || features_per_level < 1)
    throw ConfigError("grid encoding: levels, base_resolution and features_per_level must be >= 1");
  if (!(growth_factor >= 1.0)) throw ConfigError("grid encoding: growth_factor must be >= 1");
  if (input_dim != 3 && input_dim != 4) throw ConfigError("grid encoding: input_dim must be 3 or 4");
  if (log2_table_size < 4 || log2_table_size > 26) throw ConfigError("grid encoding: log2_table_size out of range");
}

void to_json(nlohmann::json& j, const GridConfig& c) {
  j = nlohmann::json{{"levels", c.levels},
                     {"base_resolution", c.base_resolution},
                     {"growth_factor", c.growth_factor},
                     {"features_per_level", c.features_per_level},
                     {"input_dim", c.input_dim},
                     {"log2_table_size", c.log2_table_size}};
}

void from_json(const nlohmann::json& j, GridConfig& c) {
  c.levels = j.value("levels", c.levels);
  c.base_resolution = j.value("base_resolution", c.base_resolution);
  c.growth_factor = j.value("growth_factor", c.growth_factor);
  c.features_per_level = j.value("features_per_level", c.features_per_level);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.log2_table_size = j.value("log2_table_size", c.log2_table_size);
}

// ------------------------------------------------------------ GridEncoding

namespace {
constexpr std::uint64_t kPrimes[4] = {1ULL, 2654435761ULL, 805459861ULL, 3674653429ULL};
}

GridEncoding::GridEncoding(const GridConfig& config, ParameterStore& store, const std::string& prefix, Rng& rng)
    : config_(config) {
  config_.validate();
  const std::size_t budget = std::size_t{1} << config_.log2_table_size;
  const auto d = static_cast<std::size_t>(config_.input_dim);
  for (int l = 0; l < config_.levels; ++l) {
    Level lv;
    lv.resolution = static_cast<int>(std::lround(config_.base_resolution * std::pow(config_.growth_factor, l)));
    // Dense vertex count, saturating once it passes the budget.
    std::size_t dense = 1;
    for (std::size_t k = 0; k < d && dense <= budget; ++k) dense *= static_cast<std::size_t>(lv.resolution + 1);
    lv.hashed = dense > budget;
    lv.table_size = lv.hashed ? budget : dense;
    std::size_t stride = 1;
    for (std::size_t k = 0; k < d; ++k) {
      lv.strides[k] = stride;
      stride *= static_cast<std::size_t>(lv.resolution + 1);
    }
    levels_.push_back(lv);
    Tensor t({lv.table_size, static_cast<std::size_t>(config_.features_per_level)});
    for (auto& v : t.data()) v = rng.uniform(-1e-4, 1e-4);
    tables_.push_back(&store.add(prefix + ".level" + std::to_string(l), std::move(t)));
  }
}

std::size_t GridEncoding::vertex_index(int level, std::span<const std::int64_t> coord) const {
  const Level& lv = levels_[static_cast<std::size_t>(level)];
  const auto d = static_cast<std::size_t>(config_.input_dim);
  if (lv.hashed) {
    std::uint64_t h = 0;
    for (std::size_t k = 0; k < d; ++k) h ^= static_cast<std::uint64_t>(coord[k]) * kPrimes[k];
    return static_cast<std::size_t>(h & (lv.table_size - 1));
  }
  std::size_t idx = 0;
  for (std::size_t k = 0; k < d; ++k) idx += static_cast<std::size_t>(coord[k]) * lv.strides[k];
  return idx;
}

namespace {

// Visits the 2^D corners of the cell containing p and reports (table row,
// weight) pairs. Hashed tables have power-of-two sizes.
template <std::size_t D, typename Level, typename Visit>
inline void for_each_corner(const Level& lv, const double* p, Visit&& visit) {
  const int res = lv.resolution;
  std::uint64_t base[D];
  double frac[D];
  for (std::size_t k = 0; k < D; ++k) {
    const double x = std::clamp(p[k], 0.0, 1.0) * res;
    const auto i0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(x), 0, res - 1);
    base[k] = static_cast<std::uint64_t>(i0);
    frac[k] = x - static_cast<double>(i0);
  }
  const std::uint64_t hash_mask = lv.table_size - 1;
  for (unsigned mask = 0; mask < (1u << D); ++mask) {
    double w = 1.0;
    std::uint64_t idx = 0;
    for (std::size_t k = 0; k < D; ++k) {
      const bool hi = (mask >> k) & 1u;
      const std::uint64_t c = base[k] + (hi ? 1 : 0);
      w *= hi ? frac[k] : 1.0 - frac[k];
      idx = lv.hashed ? idx ^ (c * kPrimes[k]) : idx + c * lv.strides[k];
    }
    visit(static_cast<std::size_t>(lv.hashed ? idx & hash_mask : idx), w);
  }
}

template <std::size_t D, typename Level>
void encode_forward(const Level& lv, const double* table, const double* positions, std::size_t n, std::size_t F,
                    std::size_t width, std::size_t off, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * width + off;
    for_each_corner<D>(lv, positions + i * D, [&](std::size_t row, double w) {
      const double* t = table + row * F;
      for (std::size_t f = 0; f < F; ++f) o[f] += w * t[f];
    });
  }
}

template <std::size_t D, typename Level>
void encode_backward(const Level& lv, double* grad, const double* positions, std::size_t n, std::size_t F,
                     std::size_t width, std::size_t off, const double* g) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = g + i * width + off;
    for_each_corner<D>(lv, positions + i * D, [&](std::size_t row, double w) {
      double* t = grad + row * F;
      for (std::size_t f = 0; f < F; ++f) t[f] += w * gi[f];
    });
  }
}

}  // namespace

Var GridEncoding::encode(Tape& tape, const Tensor& positions) const {
  const auto d = static_cast<std::size_t>(config_.input_dim);
  if (positions.ndim() != 2 || positions.cols() != d)
    throw ShapeError("grid_encode: expected positions [n," + std::to_string(d) + "], got " +
                     shape_str(positions.shape()));
  const std::size_t n = positions.rows();
  const auto F = static_cast<std::size_t>(config_.features_per_level);
  const std::size_t width = output_dim();

  std::vector<Tape::NodeId> inputs;
  for (Parameter* t : tables_) inputs.push_back(tape.param(*t).id);

  Tensor out({n, width});
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const double* table = tables_[l]->value.ptr();
    if (d == 3)
      encode_forward<3>(levels_[l], table, positions.ptr(), n, F, width, l * F, out.ptr());
    else
      encode_forward<4>(levels_[l], table, positions.ptr(), n, F, width, l * F, out.ptr());
  }

  auto pos = std::make_shared<const Tensor>(positions);
  return tape.record("grid_encode", std::move(out), inputs, [this, pos, inputs, n, d, F, width](Tape& t, const Tensor& g) {
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      const auto id = inputs[l];
      if (!t.requires_grad(id)) continue;
      double* gt = t.grad_buffer(id).ptr();
      if (d == 3)
        encode_backward<3>(levels_[l], gt, pos->ptr(), n, F, width, l * F, g.ptr());
      else
        encode_backward<4>(levels_[l], gt, pos->ptr(), n, F, width, l * F, g.ptr());
    }
  });
}

}  // namespace hsnerf
