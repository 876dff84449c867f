#include "hsnerf/render.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "hsnerf/compositing.hpp"
#include "hsnerf/error.hpp"

namespace hsnerf {

void SamplerConfig::validate() const {
  if (proposal_samples.empty()) throw ConfigError("sampler: at least one proposal stage is required");
  for (int k : proposal_samples)
    if (k < 1) throw ConfigError("sampler: proposal sample counts must be >= 1");
  if (fine_samples < 1) throw ConfigError("sampler: fine_samples must be >= 1");
  if (!(histogram_padding >= 0.0)) throw ConfigError("sampler: histogram_padding must be >= 0");
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = nlohmann::json{{"proposal_samples", c.proposal_samples},
                     {"fine_samples", c.fine_samples},
                     {"histogram_padding", c.histogram_padding}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  c.proposal_samples = j.value("proposal_samples", c.proposal_samples);
  c.fine_samples = j.value("fine_samples", c.fine_samples);
  c.histogram_padding = j.value("histogram_padding", c.histogram_padding);
}

namespace {

struct Batch {
  Tensor positions;   // [G*K, 3] normalized to the box
  Tensor directions;  // [G*K, 3]
  Tensor edges;       // [G, K+1]
  std::vector<double> deltas;
};

Batch assemble(const RayBatch& rays, std::span<const std::size_t> hit, const std::vector<SampleSet>& sets,
               const SceneBox& box) {
  const std::size_t G = hit.size();
  const std::size_t K = sets.front().size();
  Batch b{Tensor({G * K, 3}), Tensor({G * K, 3}), Tensor({G, K + 1}), std::vector<double>(G * K)};
  for (std::size_t g = 0; g < G; ++g) {
    const Vec3& o = rays.origins[hit[g]];
    const Vec3& d = rays.directions[hit[g]];
    const SampleSet& s = sets[g];
    std::copy(s.edges.begin(), s.edges.end(), b.edges.ptr() + g * (K + 1));
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t r = g * K + k;
      const double t = s.points[k];
      const Vec3 p = box.normalize({o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]});
      for (std::size_t c = 0; c < 3; ++c) {
        b.positions.at(r, c) = p[c];
        b.directions.at(r, c) = d[c];
      }
      b.deltas[r] = s.deltas[k];
    }
  }
  return b;
}

Tensor weights_of(const Tensor& density, std::span<const double> deltas, std::size_t K) {
  Tensor w(density.shape());
  const std::size_t L = density.cols(), G = density.rows() / K;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l) {
      double T = 1.0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t r = g * K + k;
        const double trans = std::exp(-density.at(r, l) * deltas[r]);
        w.at(r, l) = T * (1.0 - trans);
        T *= trans;
      }
    }
  return w;
}

struct Lane {
  std::vector<double> wavelengths;
  std::vector<double> background;
  std::optional<double> proposal_wavelength;
};

struct LaneResult {
  Var pixel;  // [G, lane L]
  Var interlevel;
};

LaneResult run_lane(Tape& tape, const Field& field, const SamplerConfig& sampler, const RenderRequest& req,
                    std::span<const std::size_t> hit, const Lane& lane) {
  Rng fallback(0);
  Rng& rng = req.rng ? *req.rng : fallback;
  Rng* resample_rng = req.jitter ? &rng : nullptr;
  const std::size_t G = hit.size();
  const std::size_t stages = sampler.proposal_samples.size();

  std::vector<SampleSet> sets(G);
  for (std::size_t g = 0; g < G; ++g)
    sets[g] = stratified_samples(req.rays.near[hit[g]], req.rays.far[hit[g]], sampler.proposal_samples[0], req.jitter,
                                 rng);

  struct Stage {
    Tensor edges;
    Var weights;
  };
  std::vector<Stage> recorded;
  for (std::size_t s = 0; s < stages; ++s) {
    const auto K = static_cast<std::size_t>(sampler.proposal_samples[s]);
    Batch b = assemble(req.rays, hit, sets, req.box);
    Var density = field.eval_proposal(tape, static_cast<int>(s), b.positions, lane.proposal_wavelength);
    Var weights = ad::composite_weights(density, b.deltas, K);
    const Tensor& wv = weights.value();
    const int next = s + 1 < stages ? sampler.proposal_samples[s + 1] : sampler.fine_samples;
    std::vector<double> padded(K);
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t k = 0; k < K; ++k) padded[k] = wv[g * K + k] + sampler.histogram_padding;
      SampleSet resampled = pdf_resample(sets[g].edges, padded, next, resample_rng);
      sets[g] = std::move(resampled);
    }
    if (req.with_interlevel) recorded.push_back({std::move(b.edges), weights});
  }

  const auto Kf = static_cast<std::size_t>(sampler.fine_samples);
  Batch fine = assemble(req.rays, hit, sets, req.box);
  FieldOutput out = field.eval(tape, FieldQuery{fine.positions, fine.directions, lane.wavelengths});
  const Tensor bg = Tensor::vector(lane.background);
  LaneResult res;
  res.pixel = ad::composite(out.density, out.radiance, fine.deltas, Kf, bg);
  if (req.with_interlevel) {
    const Tensor fine_w = weights_of(out.density.value(), fine.deltas, Kf);
    for (const Stage& st : recorded) {
      Var term = ad::interlevel_loss(fine.edges, fine_w, st.edges, st.weights);
      res.interlevel = res.interlevel.tape ? ad::add(res.interlevel, term) : term;
    }
  }
  return res;
}

}  // namespace

RenderResult render_rays(Tape& tape, const Field& field, const SamplerConfig& sampler, const RenderRequest& req) {
  sampler.validate();
  const std::size_t R = req.rays.size();
  const std::size_t L = req.wavelengths.size();
  if (L == 0) throw ShapeError("render_rays: no wavelengths requested");
  if (req.background.size() != L)
    throw ShapeError("render_rays: background has " + std::to_string(req.background.size()) + " values for " +
                     std::to_string(L) + " wavelengths");
  if (sampler.proposal_samples.size() != static_cast<std::size_t>(field.config().proposal_networks))
    throw ConfigError("sampler has " + std::to_string(sampler.proposal_samples.size()) + " proposal stages but the field has " +
                      std::to_string(field.config().proposal_networks) + " proposal networks");
  if (req.jitter && !req.rng) throw ConfigError("render_rays: jittered sampling needs an rng");

  std::vector<std::size_t> hit, miss;
  for (std::size_t i = 0; i < R; ++i) (req.rays.hit[i] ? hit : miss).push_back(i);

  RenderResult result;
  result.hit_rays = hit.size();
  Tensor miss_fill({R, L});
  for (std::size_t i : miss)
    for (std::size_t l = 0; l < L; ++l) miss_fill.at(i, l) = req.background[l];

  if (hit.empty()) {
    result.pixel = tape.constant(std::move(miss_fill));
    result.interlevel = tape.constant(Tensor::scalar(0.0));
    return result;
  }

  std::vector<Lane> lanes;
  if (field.config().proposal == ProposalVariant::P0) {
    lanes.push_back({{req.wavelengths.begin(), req.wavelengths.end()}, {req.background.begin(), req.background.end()},
                     std::nullopt});
  } else {
    for (std::size_t l = 0; l < L; ++l)
      lanes.push_back({{req.wavelengths[l]}, {req.background[l]}, req.wavelengths[l]});
  }

  std::vector<Var> pixels;
  Var interlevel;
  for (const Lane& lane : lanes) {
    LaneResult lr = run_lane(tape, field, sampler, req, hit, lane);
    pixels.push_back(lr.pixel);
    if (lr.interlevel.tape) {
      const double share = static_cast<double>(lane.wavelengths.size()) / static_cast<double>(L);
      Var term = lanes.size() == 1 ? lr.interlevel : ad::scale(lr.interlevel, share);
      interlevel = interlevel.tape ? ad::add(interlevel, term) : term;
    }
  }
  Var hit_pixels = pixels.size() == 1 ? pixels.front() : ad::concat(pixels);
  result.pixel = miss.empty() ? hit_pixels
                              : ad::add(ad::scatter_rows(hit_pixels, hit, R, 0.0), tape.constant(std::move(miss_fill)));
  result.interlevel = interlevel.tape ? interlevel : tape.constant(Tensor::scalar(0.0));
  return result;
}

constexpr std::size_t kRenderPairsPerChunk = 16384;

Tensor render_image(const Field& field, const SamplerConfig& sampler, const CameraFrame& camera, const SceneBox& box,
                    std::span<const double> wavelengths, std::span<const double> background, std::size_t chunk) {
  if (chunk == 0) throw ConfigError("render_image: chunk must be positive");
  const std::size_t n = camera.pixel_count();
  const std::size_t L = wavelengths.size();
  // Bound ray-wavelength pairs per chunk so memory does not scale with L.
  chunk = std::max<std::size_t>(1, std::min(chunk, kRenderPairsPerChunk / std::max<std::size_t>(1, L)));
  Tensor image({n, L});
  std::vector<std::size_t> pixels;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    pixels.resize(end - begin);
    for (std::size_t p = begin; p < end; ++p) pixels[p - begin] = p;
    RayBatch rays = generate_rays(camera, pixels);
    clip_rays(rays, box);
    Tape tape(false);
    RenderResult r = render_rays(tape, field, sampler, RenderRequest{rays, box, wavelengths, background});
    const Tensor& v = r.pixel.value();
    std::copy(v.data().begin(), v.data().end(), image.ptr() + begin * L);
  }
  return image;
}

}  // namespace hsnerf
