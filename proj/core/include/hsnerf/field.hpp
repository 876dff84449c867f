#pragma once

// Spectral radiance / density fields and proposal networks.
//
// Variant naming follows the ablation grid:
//   radiance  C  : latent decoder c(lambda; theta, d)
//             C1 : N discrete output channels
//             C2 : lambda joins the position before a 4-D grid encoding
//   density   sigma  : latent decoder sigma(lambda; theta)
//             sigma0 : one scalar density shared by every wavelength
//             sigma1 : N discrete density channels
//             sigma2 : 4-D grid path (paired with C2)
//   proposal  P0      : scalar proposal density
//             Plambda : wavelength-conditioned proposal density

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/autodiff.hpp"
#include "hsnerf/encoding.hpp"
#include "hsnerf/error.hpp"

namespace hsnerf {

enum class RadianceVariant { C, C1, C2 };
enum class DensityVariant { Sigma, Sigma0, Sigma1, Sigma2 };
enum class ProposalVariant { P0, PLambda };

std::string to_string(RadianceVariant v);
std::string to_string(DensityVariant v);
std::string to_string(ProposalVariant v);
RadianceVariant parse_radiance_variant(const std::string& s);
DensityVariant parse_density_variant(const std::string& s);
ProposalVariant parse_proposal_variant(const std::string& s);

/// Raised when a discrete variant is queried at a wavelength it has no
/// channel for; discrete heads cannot interpolate.
class WavelengthError : public DataError {
 public:
  using DataError::DataError;
};

struct FieldConfig {
  RadianceVariant radiance = RadianceVariant::C;
  DensityVariant density = DensityVariant::Sigma0;
  ProposalVariant proposal = ProposalVariant::P0;

  /// Channel centres in nm; required by the discrete variants (N = size).
  std::vector<double> channel_wavelengths;
  /// Wavelength normalization range for the continuous variants.
  double lambda_min = 400.0;
  double lambda_max = 900.0;

  int latent_dim = 15;
  int lambda_terms = 8;
  int decoder_hidden = 64;
  int decoder_layers = 3;
  bool shared_latent = true;

  int geometry_hidden = 64;
  int color_hidden = 64;
  int color_layers = 3;
  int direction_terms = 4;
  GridConfig position_grid{8, 16, 1.5, 2, 3, 16};

  int proposal_networks = 2;
  GridConfig proposal_grid{5, 16, 1.5, 2, 3, 16};
  int proposal_hidden = 16;
  int proposal_latent = 7;
  int proposal_lambda_terms = 2;
  int proposal_lambda_hidden = 7;

  std::size_t n_channels() const { return channel_wavelengths.size(); }
  /// Throws ConfigError for incoherent combinations.
  void validate() const;
};

void to_json(nlohmann::json& j, const FieldConfig& c);
void from_json(const nlohmann::json& j, FieldConfig& c);

/// Fully connected stack with ReLU between layers and a linear output.
struct Mlp {
  struct Layer {
    Parameter* weight = nullptr;  // [in, out]
    Parameter* bias = nullptr;    // [out]
  };
  std::vector<Layer> layers;

  static Mlp create(ParameterStore& store, const std::string& prefix, std::span<const std::size_t> dims, Rng& rng);
  std::size_t input_dim() const { return layers.front().weight->value.rows(); }
  std::size_t output_dim() const { return layers.back().weight->value.cols(); }

  Var forward(Tape& tape, Var x) const;
  /// Same as forward but the first layer input is concat(per_row, per_group)
  /// expanded to every (row, group) pair: output row i*G + g. The first
  /// `group_width` weight rows multiply the per-group part.
  Var forward_pairs(Tape& tape, Var per_row, Var per_group) const;
};

struct FieldQuery {
  const Tensor& positions;   // [n,3], scene box normalized to [0,1]^3
  const Tensor& directions;  // [n,3], unit
  std::span<const double> wavelengths;
};

struct FieldOutput {
  Var density;   // [n, L], >= 0
  Var radiance;  // [n, L], in (0, 1)
};

class Field {
 public:
  Field(const FieldConfig& config, std::uint64_t seed);
  Field(const Field&) = delete;
  Field& operator=(const Field&) = delete;

  const FieldConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const SinusoidalEncoding& lambda_encoding() const { return lambda_enc_; }

  /// Density and radiance at every (position, wavelength) pair.
  FieldOutput eval(Tape& tape, const FieldQuery& q) const;
  Var eval_radiance(Tape& tape, const FieldQuery& q) const { return eval(tape, q).radiance; }
  Var eval_density(Tape& tape, const FieldQuery& q) const { return eval(tape, q).density; }

  /// Proposal density [n,1] of proposal stage `stage`. Plambda requires a
  /// wavelength; P0 ignores it.
  Var eval_proposal(Tape& tape, int stage, const Tensor& positions, std::optional<double> wavelength) const;

  /// Channel indices for the requested wavelengths (discrete variants).
  std::vector<std::size_t> channel_indices(std::span<const double> wavelengths) const;

  /// Whether the field can be queried at wavelengths absent from its channels.
  bool interpolates_wavelength() const;

 private:
  struct Proposal {
    std::unique_ptr<GridEncoding> grid;
    Mlp position_mlp;
    Mlp lambda_mlp;
  };

  FieldOutput eval_grid3(Tape& tape, const FieldQuery& q) const;
  FieldOutput eval_grid4(Tape& tape, const FieldQuery& q) const;

  FieldConfig config_;
  ParameterStore params_;
  SinusoidalEncoding lambda_enc_;
  std::unique_ptr<GridEncoding> grid_;
  Mlp geometry_;
  Mlp color_;
  Mlp density_decoder_;
  std::vector<Proposal> proposals_;
};

/// Deterministic construction: identical (config, seed) gives bitwise
/// identical parameters.
std::unique_ptr<Field> build_field(const FieldConfig& config, std::uint64_t seed);

}  // namespace hsnerf
