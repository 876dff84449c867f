#pragma once

// Classical volume rendering per wavelength and the proposal upper-bound loss.
//
// Batched layouts: G groups (rays) of K samples each. Per-sample quantities
// are [G*K, L] with row g*K + k; per-group results are [G, L].

#include <cstddef>
#include <span>
#include <vector>

#include "hsnerf/autodiff.hpp"

namespace hsnerf {

struct RenderOutput {
  std::size_t samples = 0;
  std::size_t wavelengths = 0;
  std::vector<double> pixel;         // [L]
  std::vector<double> weights;       // [K*L], row k*L + l
  std::vector<double> accumulation;  // [L]
  std::vector<double> depth;         // [L]

  double weight(std::size_t k, std::size_t l) const { return weights[k * wavelengths + l]; }
};

/// One ray. density, radiance: [K, L]; deltas: [K]; background: [L].
/// t_points gives the sample distances used for depth; when empty, bin
/// midpoints reconstructed from the deltas (starting at 0) are used.
RenderOutput composite(const Tensor& density, const Tensor& radiance, std::span<const double> deltas,
                       std::span<const double> background, std::span<const double> t_points = {});

/// Mean squared error over every element.
double recon_loss(std::span<const double> predicted, std::span<const double> target);

/// Upper-bound penalty of one ray: for each fine bin the bound is the total
/// proposal weight of proposal bins overlapping it with positive length.
/// Fine edges must lie inside the proposal interval.
double interlevel_loss(std::span<const double> fine_edges, std::span<const double> fine_weights,
                       std::span<const double> prop_edges, std::span<const double> prop_weights);

struct WavelengthPenalty {
  std::vector<double> per_wavelength;
  double total = 0.0;  // mean of per_wavelength
};

/// Shared proposal histogram against per-wavelength fine weights [K, L].
WavelengthPenalty wavelength_penalty_check(std::span<const double> prop_edges, std::span<const double> prop_weights,
                                           std::span<const double> fine_edges, const Tensor& fine_weights);

inline constexpr double kInterlevelEpsilon = 1e-7;

namespace ad {

/// Composited pixels [G, L]. background is [L] (shared) or [G, L].
/// Differentiable with respect to density and radiance.
Var composite(Var density, Var radiance, std::span<const double> deltas, std::size_t K, const Tensor& background);

/// Compositing weights w = T * alpha, [G*K, L]; differentiable in density.
Var composite_weights(Var density, std::span<const double> deltas, std::size_t K);

/// Mean recon loss.
Var recon_loss(Var predicted, Var target);

/// Mean over groups and wavelengths of the per-ray interlevel loss.
/// fine_edges [G, K+1], fine_weights [G*K, L] (treated as constants),
/// prop_edges [G, Kp+1], prop_weights [G*Kp, 1].
Var interlevel_loss(const Tensor& fine_edges, const Tensor& fine_weights, const Tensor& prop_edges, Var prop_weights);

}  // namespace ad

}  // namespace hsnerf
