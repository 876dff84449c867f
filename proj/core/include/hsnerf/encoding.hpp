#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/autodiff.hpp"
#include "hsnerf/rng.hpp"

namespace hsnerf {

/// Frequency encoding of a scalar over a fixed domain. The input is mapped to
/// u = (x - min) / (max - min), clamped to [0, 1], and encoded as
/// [sin(2^k pi u), cos(2^k pi u)] for k = 0 .. n_terms-1 (interleaved).
class SinusoidalEncoding {
 public:
  SinusoidalEncoding(int n_terms, double domain_min, double domain_max);

  int n_terms() const { return n_terms_; }
  std::size_t output_dim() const { return 2 * static_cast<std::size_t>(n_terms_); }
  double domain_min() const { return min_; }
  double domain_max() const { return max_; }

  std::vector<double> encode(double x) const;
  /// Row i is encode(xs[i]).
  Tensor encode_batch(std::span<const double> xs) const;

 private:
  int n_terms_;
  double min_;
  double max_;
};

/// Encodes each component of unit directions over [-1, 1] and concatenates:
/// [n,3] -> [n, 3 * 2 * n_terms].
Tensor encode_directions(const Tensor& directions, int n_terms);

struct GridConfig {
  int levels = 8;
  int base_resolution = 16;
  double growth_factor = 1.5;
  int features_per_level = 2;
  int input_dim = 3;
  /// Levels whose dense vertex count exceeds 2^log2_table_size are hashed.
  int log2_table_size = 16;

  std::size_t output_dim() const {
    return static_cast<std::size_t>(levels) * static_cast<std::size_t>(features_per_level);
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const GridConfig& c);
void from_json(const nlohmann::json& j, GridConfig& c);

/// Multiresolution grid of trainable feature vectors with multilinear
/// interpolation. Coarse levels are stored densely; levels that would exceed
/// the table budget fall back to spatial hashing.
class GridEncoding {
 public:
  /// Registers one parameter block per level as "<prefix>.level<k>".
  GridEncoding(const GridConfig& config, ParameterStore& store, const std::string& prefix, Rng& rng);

  const GridConfig& config() const { return config_; }
  std::size_t output_dim() const { return config_.output_dim(); }
  int resolution(int level) const { return levels_[static_cast<std::size_t>(level)].resolution; }
  std::size_t table_size(int level) const { return levels_[static_cast<std::size_t>(level)].table_size; }
  bool is_hashed(int level) const { return levels_[static_cast<std::size_t>(level)].hashed; }
  Parameter& table(int level) const { return *tables_[static_cast<std::size_t>(level)]; }

  /// Table row used for a vertex with integer coordinates at a level.
  std::size_t vertex_index(int level, std::span<const std::int64_t> coord) const;

  /// positions: [n, input_dim] in the unit box (clamped). Differentiable with
  /// respect to the feature tables only.
  Var encode(Tape& tape, const Tensor& positions) const;

 private:
  struct Level {
    int resolution = 0;
    std::size_t table_size = 0;
    bool hashed = false;
    std::size_t strides[4] = {};  // dense layout
  };
  GridConfig config_;
  std::vector<Level> levels_;
  std::vector<Parameter*> tables_;
};

}  // namespace hsnerf
