#include "hsnerf/field.hpp"

#include <algorithm>
#include <cmath>

namespace hsnerf {

// ---------------------------------------------------------------- variants

std::string to_string(RadianceVariant v) {
  switch (v) {
    case RadianceVariant::C: return "C";
    case RadianceVariant::C1: return "C1";
    case RadianceVariant::C2: return "C2";
  }
  return "?";
}

std::string to_string(DensityVariant v) {
  switch (v) {
    case DensityVariant::Sigma: return "sigma";
    case DensityVariant::Sigma0: return "sigma0";
    case DensityVariant::Sigma1: return "sigma1";
    case DensityVariant::Sigma2: return "sigma2";
  }
  return "?";
}

std::string to_string(ProposalVariant v) { return v == ProposalVariant::P0 ? "P0" : "Plambda"; }

RadianceVariant parse_radiance_variant(const std::string& s) {
  if (s == "C") return RadianceVariant::C;
  if (s == "C1") return RadianceVariant::C1;
  if (s == "C2") return RadianceVariant::C2;
  throw ConfigError("unknown radiance variant '" + s + "' (expected C, C1 or C2)");
}

DensityVariant parse_density_variant(const std::string& s) {
  if (s == "sigma") return DensityVariant::Sigma;
  if (s == "sigma0") return DensityVariant::Sigma0;
  if (s == "sigma1") return DensityVariant::Sigma1;
  if (s == "sigma2") return DensityVariant::Sigma2;
  throw ConfigError("unknown density variant '" + s + "' (expected sigma, sigma0, sigma1 or sigma2)");
}

ProposalVariant parse_proposal_variant(const std::string& s) {
  if (s == "P0") return ProposalVariant::P0;
  if (s == "Plambda") return ProposalVariant::PLambda;
  throw ConfigError("unknown proposal variant '" + s + "' (expected P0 or Plambda)");
}

// ------------------------------------------------------------- FieldConfig

void FieldConfig::validate() const {
  const bool discrete = radiance == RadianceVariant::C1 || density == DensityVariant::Sigma1;
  if (discrete) {
    if (channel_wavelengths.empty()) throw ConfigError("C1/sigma1 variants need the channel count N (channel_wavelengths)");
    if (!std::is_sorted(channel_wavelengths.begin(), channel_wavelengths.end()) ||
        std::adjacent_find(channel_wavelengths.begin(), channel_wavelengths.end()) != channel_wavelengths.end())
      throw ConfigError("channel_wavelengths must be strictly increasing");
  }
  if ((radiance == RadianceVariant::C2) != (density == DensityVariant::Sigma2))
    throw ConfigError("C2 and sigma2 share the 4-D position/wavelength encoding and must be used together");
  if (!(lambda_max > lambda_min)) throw ConfigError("lambda_max must exceed lambda_min");
  if (latent_dim < 1 || lambda_terms < 1 || decoder_hidden < 1 || decoder_layers < 2)
    throw ConfigError("decoder needs latent_dim, lambda_terms, decoder_hidden >= 1 and decoder_layers >= 2");
  if (geometry_hidden < 1 || color_hidden < 1 || color_layers < 2 || direction_terms < 1)
    throw ConfigError("geometry/color network sizes must be positive (color_layers >= 2)");
  if (proposal_networks < 1 || proposal_hidden < 1 || proposal_latent < 1 || proposal_lambda_terms < 1 ||
      proposal_lambda_hidden < 1)
    throw ConfigError("proposal network sizes must be positive");
  position_grid.validate();
  proposal_grid.validate();
  if (proposal_grid.input_dim != 3) throw ConfigError("proposal grid must be 3-D");
}

void to_json(nlohmann::json& j, const FieldConfig& c) {
  j = nlohmann::json{{"radiance", to_string(c.radiance)},
                     {"density", to_string(c.density)},
                     {"proposal", to_string(c.proposal)},
                     {"channel_wavelengths", c.channel_wavelengths},
                     {"lambda_min", c.lambda_min},
                     {"lambda_max", c.lambda_max},
                     {"latent_dim", c.latent_dim},
                     {"lambda_terms", c.lambda_terms},
                     {"decoder_hidden", c.decoder_hidden},
                     {"decoder_layers", c.decoder_layers},
                     {"shared_latent", c.shared_latent},
                     {"geometry_hidden", c.geometry_hidden},
                     {"color_hidden", c.color_hidden},
                     {"color_layers", c.color_layers},
                     {"direction_terms", c.direction_terms},
                     {"position_grid", c.position_grid},
                     {"proposal_networks", c.proposal_networks},
                     {"proposal_grid", c.proposal_grid},
                     {"proposal_hidden", c.proposal_hidden},
                     {"proposal_latent", c.proposal_latent},
                     {"proposal_lambda_terms", c.proposal_lambda_terms},
                     {"proposal_lambda_hidden", c.proposal_lambda_hidden}};
}

void from_json(const nlohmann::json& j, FieldConfig& c) {
  if (j.contains("radiance")) c.radiance = parse_radiance_variant(j.at("radiance").get<std::string>());
  if (j.contains("density")) c.density = parse_density_variant(j.at("density").get<std::string>());
  if (j.contains("proposal")) c.proposal = parse_proposal_variant(j.at("proposal").get<std::string>());
  c.channel_wavelengths = j.value("channel_wavelengths", c.channel_wavelengths);
  c.lambda_min = j.value("lambda_min", c.lambda_min);
  c.lambda_max = j.value("lambda_max", c.lambda_max);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.lambda_terms = j.value("lambda_terms", c.lambda_terms);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.shared_latent = j.value("shared_latent", c.shared_latent);
  c.geometry_hidden = j.value("geometry_hidden", c.geometry_hidden);
  c.color_hidden = j.value("color_hidden", c.color_hidden);
  c.color_layers = j.value("color_layers", c.color_layers);
  c.direction_terms = j.value("direction_terms", c.direction_terms);
  if (j.contains("position_grid")) from_json(j.at("position_grid"), c.position_grid);
  c.proposal_networks = j.value("proposal_networks", c.proposal_networks);
  if (j.contains("proposal_grid")) from_json(j.at("proposal_grid"), c.proposal_grid);
  c.proposal_hidden = j.value("proposal_hidden", c.proposal_hidden);
  c.proposal_latent = j.value("proposal_latent", c.proposal_latent);
  c.proposal_lambda_terms = j.value("proposal_lambda_terms", c.proposal_lambda_terms);
  c.proposal_lambda_hidden = j.value("proposal_lambda_hidden", c.proposal_lambda_hidden);
}

// --------------------------------------------------------------------- Mlp

Mlp Mlp::create(ParameterStore& store, const std::string& prefix, std::span<const std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("Mlp needs at least input and output sizes");
  Mlp mlp;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const std::size_t in = dims[k], out = dims[k + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({in, out});
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
    Layer layer;
    layer.weight = &store.add(prefix + "." + std::to_string(k) + ".weight", std::move(w));
    layer.bias = &store.add(prefix + "." + std::to_string(k) + ".bias", Tensor({out}));
    mlp.layers.push_back(layer);
  }
  return mlp;
}

Var Mlp::forward(Tape& tape, Var x) const {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = ad::add_row(ad::matmul(x, tape.param(*layers[k].weight)), tape.param(*layers[k].bias));
    if (k + 1 < layers.size()) x = ad::relu(x);
  }
  return x;
}

Var Mlp::forward_pairs(Tape& tape, Var per_row, Var per_group) const {
  const std::size_t gw = per_group.cols();
  Var w0 = tape.param(*layers[0].weight);
  if (gw + per_row.cols() != w0.rows())
    throw ShapeError("Mlp::forward_pairs: input widths " + std::to_string(gw) + "+" + std::to_string(per_row.cols()) +
                     " do not match first layer " + shape_str(w0.shape()));
  Var a = ad::matmul(per_row, ad::slice_rows(w0, gw, w0.rows()));
  Var b = ad::matmul(per_group, ad::slice_rows(w0, 0, gw));
  Var x = ad::add_row(ad::pair_sum(a, b), tape.param(*layers[0].bias));
  for (std::size_t k = 1; k < layers.size(); ++k) {
    x = ad::relu(x);
    x = ad::add_row(ad::matmul(x, tape.param(*layers[k].weight)), tape.param(*layers[k].bias));
  }
  return x;
}

// ------------------------------------------------------------------- Field

namespace {

std::vector<std::size_t> mlp_dims(std::size_t in, std::size_t hidden, int layers, std::size_t out) {
  std::vector<std::size_t> d{in};
  for (int k = 0; k + 1 < layers; ++k) d.push_back(hidden);
  d.push_back(out);
  return d;
}

void require_query(const FieldQuery& q) {
  if (q.positions.ndim() != 2 || q.positions.cols() != 3)
    throw ShapeError("field: positions must be [n,3], got " + shape_str(q.positions.shape()));
  if (q.directions.shape() != q.positions.shape())
    throw ShapeError("field: directions " + shape_str(q.directions.shape()) + " do not match positions " +
                     shape_str(q.positions.shape()));
  if (q.wavelengths.empty()) throw ShapeError("field: at least one wavelength is required");
}

}  // namespace

Field::Field(const FieldConfig& config, std::uint64_t seed)
    : config_(config), lambda_enc_(config.lambda_terms, config.lambda_min, config.lambda_max) {
  config_.validate();
  Rng rng(derive_seed(seed, {0x6669656CULL}));
  const auto N = config_.n_channels();
  const auto lat = static_cast<std::size_t>(config_.latent_dim);
  const auto dir_dim = static_cast<std::size_t>(6 * config_.direction_terms);
  const auto lam_dim = lambda_enc_.output_dim();

  GridConfig pg = config_.position_grid;
  pg.input_dim = config_.radiance == RadianceVariant::C2 ? 4 : 3;
  config_.position_grid = pg;
  grid_ = std::make_unique<GridEncoding>(pg, params_, "field.grid", rng);

  std::size_t density_width = 0;
  switch (config_.density) {
    case DensityVariant::Sigma0:
    case DensityVariant::Sigma2: density_width = 1; break;
    case DensityVariant::Sigma1: density_width = N; break;
    case DensityVariant::Sigma: density_width = 0; break;
  }
  const bool separate_sigma_latent = config_.density == DensityVariant::Sigma && !config_.shared_latent;
  const std::size_t geo_out = density_width + lat * (separate_sigma_latent ? 2 : 1);
  const std::size_t gh = static_cast<std::size_t>(config_.geometry_hidden);
  const std::vector<std::size_t> geo_dims{grid_->output_dim(), gh, geo_out};
  geometry_ = Mlp::create(params_, "field.geometry", geo_dims, rng);

  const auto ch = static_cast<std::size_t>(config_.color_hidden);
  const auto dh = static_cast<std::size_t>(config_.decoder_hidden);
  switch (config_.radiance) {
    case RadianceVariant::C: {
      const auto d = mlp_dims(lam_dim + lat + dir_dim, dh, config_.decoder_layers, 1);
      color_ = Mlp::create(params_, "field.color_decoder", d, rng);
      break;
    }
    case RadianceVariant::C1: {
      const auto d = mlp_dims(lat + dir_dim, ch, config_.color_layers, N);
      color_ = Mlp::create(params_, "field.color", d, rng);
      break;
    }
    case RadianceVariant::C2: {
      const auto d = mlp_dims(lat + dir_dim, ch, config_.color_layers, 1);
      color_ = Mlp::create(params_, "field.color", d, rng);
      break;
    }
  }
  if (config_.density == DensityVariant::Sigma) {
    const auto d = mlp_dims(lam_dim + lat, dh, config_.decoder_layers, 1);
    density_decoder_ = Mlp::create(params_, "field.density_decoder", d, rng);
  }

  const auto ph = static_cast<std::size_t>(config_.proposal_hidden);
  for (int s = 0; s < config_.proposal_networks; ++s) {
    const std::string prefix = "proposal" + std::to_string(s);
    Proposal p;
    p.grid = std::make_unique<GridEncoding>(config_.proposal_grid, params_, prefix + ".grid", rng);
    if (config_.proposal == ProposalVariant::P0) {
      const std::vector<std::size_t> d{p.grid->output_dim(), ph, 1};
      p.position_mlp = Mlp::create(params_, prefix + ".mlp", d, rng);
    } else {
      const auto plat = static_cast<std::size_t>(config_.proposal_latent);
      const std::vector<std::size_t> d{p.grid->output_dim(), ph, plat};
      p.position_mlp = Mlp::create(params_, prefix + ".mlp", d, rng);
      const std::vector<std::size_t> dl{2 * static_cast<std::size_t>(config_.proposal_lambda_terms) + plat,
                                        static_cast<std::size_t>(config_.proposal_lambda_hidden), 1};
      p.lambda_mlp = Mlp::create(params_, prefix + ".lambda_mlp", dl, rng);
    }
    proposals_.push_back(std::move(p));
  }
}

bool Field::interpolates_wavelength() const {
  return config_.radiance != RadianceVariant::C1 && config_.density != DensityVariant::Sigma1;
}

std::vector<std::size_t> Field::channel_indices(std::span<const double> wavelengths) const {
  const auto& ch = config_.channel_wavelengths;
  std::vector<std::size_t> idx;
  idx.reserve(wavelengths.size());
  for (double w : wavelengths) {
    auto it = std::lower_bound(ch.begin(), ch.end(), w - 1e-6);
    if (it == ch.end() || std::abs(*it - w) > 1e-6)
      throw WavelengthError("discrete variant has no channel at " + std::to_string(w) +
                            " nm and cannot interpolate between channels");
    idx.push_back(static_cast<std::size_t>(it - ch.begin()));
  }
  return idx;
}

FieldOutput Field::eval(Tape& tape, const FieldQuery& q) const {
  require_query(q);
  return config_.radiance == RadianceVariant::C2 ? eval_grid4(tape, q) : eval_grid3(tape, q);
}

FieldOutput Field::eval_grid3(Tape& tape, const FieldQuery& q) const {
  const std::size_t n = q.positions.rows();
  const std::size_t L = q.wavelengths.size();
  const auto lat = static_cast<std::size_t>(config_.latent_dim);
  // Resolve discrete channels up front so a bad wavelength fails before any work.
  std::vector<std::size_t> channels;
  if (!interpolates_wavelength()) channels = channel_indices(q.wavelengths);

  Var geo = geometry_.forward(tape, grid_->encode(tape, q.positions));
  Var lam_enc;
  if (config_.radiance == RadianceVariant::C || config_.density == DensityVariant::Sigma)
    lam_enc = tape.constant(lambda_enc_.encode_batch(q.wavelengths));

  std::size_t dw = 0;
  FieldOutput out;
  switch (config_.density) {
    case DensityVariant::Sigma0: {
      dw = 1;
      const std::vector<std::size_t> bcast(L, 0);
      out.density = ad::gather_cols(ad::softplus(ad::slice_cols(geo, 0, 1)), bcast);
      break;
    }
    case DensityVariant::Sigma1: {
      dw = config_.n_channels();
      out.density = ad::softplus(ad::gather_cols(ad::slice_cols(geo, 0, dw), channels));
      break;
    }
    case DensityVariant::Sigma: {
      dw = 0;
      const std::size_t off = config_.shared_latent ? 0 : lat;
      Var theta_sigma = ad::slice_cols(geo, off, off + lat);
      Var raw = density_decoder_.forward_pairs(tape, theta_sigma, lam_enc);
      out.density = ad::softplus(ad::reshape(raw, {n, L}));
      break;
    }
    case DensityVariant::Sigma2: throw ConfigError("sigma2 requires the 4-D grid path");
  }

  Var theta_c = ad::slice_cols(geo, dw, dw + lat);
  Var dirs = tape.constant(encode_directions(q.directions, config_.direction_terms));
  Var color_in = ad::concat({theta_c, dirs});
  switch (config_.radiance) {
    case RadianceVariant::C: {
      Var raw = color_.forward_pairs(tape, color_in, lam_enc);
      out.radiance = ad::sigmoid(ad::reshape(raw, {n, L}));
      break;
    }
    case RadianceVariant::C1:
      out.radiance = ad::sigmoid(ad::gather_cols(color_.forward(tape, color_in), channels));
      break;
    case RadianceVariant::C2: throw ConfigError("C2 requires the 4-D grid path");
  }
  return out;
}

FieldOutput Field::eval_grid4(Tape& tape, const FieldQuery& q) const {
  const std::size_t n = q.positions.rows();
  const std::size_t L = q.wavelengths.size();
  const auto lat = static_cast<std::size_t>(config_.latent_dim);
  const double span = config_.lambda_max - config_.lambda_min;

  // One row per (sample, wavelength): row i*L + l.
  Tensor pos4({n * L, 4});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l) {
      double* r = pos4.ptr() + (i * L + l) * 4;
      for (std::size_t k = 0; k < 3; ++k) r[k] = q.positions.at(i, k);
      r[3] = std::clamp((q.wavelengths[l] - config_.lambda_min) / span, 0.0, 1.0);
    }
  Var geo = geometry_.forward(tape, grid_->encode(tape, pos4));

  FieldOutput out;
  out.density = ad::reshape(ad::softplus(ad::slice_cols(geo, 0, 1)), {n, L});

  const Tensor dir_enc = encode_directions(q.directions, config_.direction_terms);
  std::vector<std::size_t> repeat(n * L);
  for (std::size_t r = 0; r < repeat.size(); ++r) repeat[r] = r / L;
  Var dirs = ad::gather_rows(tape.constant(dir_enc), repeat);
  Var color_in = ad::concat({ad::slice_cols(geo, 1, 1 + lat), dirs});
  out.radiance = ad::reshape(ad::sigmoid(color_.forward(tape, color_in)), {n, L});
  return out;
}

Var Field::eval_proposal(Tape& tape, int stage, const Tensor& positions, std::optional<double> wavelength) const {
  if (stage < 0 || stage >= static_cast<int>(proposals_.size()))
    throw ConfigError("proposal stage " + std::to_string(stage) + " does not exist");
  const Proposal& p = proposals_[static_cast<std::size_t>(stage)];
  Var h = p.position_mlp.forward(tape, p.grid->encode(tape, positions));
  if (config_.proposal == ProposalVariant::P0) return ad::softplus(h);
  if (!wavelength) throw ConfigError("Plambda proposal network requires a wavelength");
  const SinusoidalEncoding enc(config_.proposal_lambda_terms, config_.lambda_min, config_.lambda_max);
  const auto e = enc.encode(*wavelength);
  Var lam = ad::broadcast_rows(tape.constant(Tensor::vector(e)), positions.rows());
  return ad::softplus(p.lambda_mlp.forward(tape, ad::concat({h, lam})));
}

std::unique_ptr<Field> build_field(const FieldConfig& config, std::uint64_t seed) {
  return std::make_unique<Field>(config, seed);
}

}  // namespace hsnerf
