#include "hsnerf/compositing.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "hsnerf/error.hpp"

namespace hsnerf {

namespace {

void check_deltas(std::span<const double> deltas) {
  for (double d : deltas)
    if (!(d > 0.0) || !std::isfinite(d)) throw NumericalError("composite: deltas must be finite and > 0");
}

void check_density(const Tensor& density) {
  for (double s : density.data())
    if (!(s >= 0.0)) throw NumericalError("composite: densities must be >= 0");
}

// Range [lo, hi) of proposal bins overlapping (a, b) with positive length.
std::pair<std::size_t, std::size_t> overlap(std::span<const double> prop_edges, double a, double b) {
  const std::size_t kp = prop_edges.size() - 1;
  // First j with p[j+1] > a.
  const auto lo = static_cast<std::size_t>(std::upper_bound(prop_edges.begin() + 1, prop_edges.end(), a) -
                                           (prop_edges.begin() + 1));
  // First j with p[j] >= b.
  const auto hi = static_cast<std::size_t>(std::lower_bound(prop_edges.begin(), prop_edges.begin() + static_cast<std::ptrdiff_t>(kp), b) -
                                           prop_edges.begin());
  return {std::min(lo, kp), std::max(std::min(hi, kp), std::min(lo, kp))};
}

void check_interval(std::span<const double> fine_edges, std::span<const double> prop_edges) {
  if (fine_edges.size() < 2 || prop_edges.size() < 2) throw ShapeError("interlevel_loss: histograms need >= 2 edges");
  const double scale = std::max({1.0, std::abs(prop_edges.front()), std::abs(prop_edges.back())});
  const double tol = 1e-9 * scale;
  if (fine_edges.front() < prop_edges.front() - tol || fine_edges.back() > prop_edges.back() + tol)
    throw DataError("interlevel_loss: fine and proposal histograms cover different ray intervals");
}

// Loss of one histogram pair; when grad_out is set, adds scale * dL/dprop.
template <typename FineAt>
double interlevel_one(std::span<const double> fine_edges, FineAt fine_w, std::span<const double> prop_edges,
                      const double* prop_w, double* grad_out, double grad_scale) {
  const std::size_t k = fine_edges.size() - 1;
  double loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto [lo, hi] = overlap(prop_edges, fine_edges[i], fine_edges[i + 1]);
    double bound = 0.0;
    for (std::size_t j = lo; j < hi; ++j) bound += prop_w[j];
    const double r = fine_w(i) - bound;
    if (r <= 0.0) continue;
    const double den = bound + kInterlevelEpsilon;
    loss += r * r / den;
    if (grad_out) {
      const double d = (-2.0 * r / den - r * r / (den * den)) * grad_scale;
      for (std::size_t j = lo; j < hi; ++j) grad_out[j] += d;
    }
  }
  return loss;
}

}  // namespace

RenderOutput composite(const Tensor& density, const Tensor& radiance, std::span<const double> deltas,
                       std::span<const double> background, std::span<const double> t_points) {
  if (density.ndim() != 2 || density.shape() != radiance.shape())
    throw ShapeError("composite: density " + shape_str(density.shape()) + " and radiance " +
                     shape_str(radiance.shape()) + " must be equal [K,L] matrices");
  const std::size_t K = density.rows(), L = density.cols();
  if (deltas.size() != K) throw ShapeError("composite: expected " + std::to_string(K) + " deltas");
  if (background.size() != L) throw ShapeError("composite: expected " + std::to_string(L) + " background values");
  if (!t_points.empty() && t_points.size() != K) throw ShapeError("composite: t_points must have K entries");
  check_deltas(deltas);
  check_density(density);

  std::vector<double> t(K);
  if (t_points.empty()) {
    double edge = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      t[k] = edge + 0.5 * deltas[k];
      edge += deltas[k];
    }
  } else {
    std::copy(t_points.begin(), t_points.end(), t.begin());
  }

  RenderOutput out;
  out.samples = K;
  out.wavelengths = L;
  out.pixel.assign(L, 0.0);
  out.weights.assign(K * L, 0.0);
  out.accumulation.assign(L, 0.0);
  out.depth.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double T = 1.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double s = density.at(k, l) * deltas[k];
      const double trans = std::exp(-s);
      const double w = T * (1.0 - trans);
      out.weights[k * L + l] = w;
      out.pixel[l] += w * radiance.at(k, l);
      out.accumulation[l] += w;
      out.depth[l] += w * t[k];
      T *= trans;
    }
    out.pixel[l] += (1.0 - out.accumulation[l]) * background[l];
  }
  return out;
}

double recon_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ShapeError("recon_loss: size mismatch");
  if (predicted.empty()) throw ShapeError("recon_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(predicted.size());
}

double interlevel_loss(std::span<const double> fine_edges, std::span<const double> fine_weights,
                       std::span<const double> prop_edges, std::span<const double> prop_weights) {
  if (fine_weights.size() + 1 != fine_edges.size() || prop_weights.size() + 1 != prop_edges.size())
    throw ShapeError("interlevel_loss: need len(edges) == len(weights) + 1");
  check_interval(fine_edges, prop_edges);
  return interlevel_one(fine_edges, [&](std::size_t i) { return fine_weights[i]; }, prop_edges, prop_weights.data(),
                        nullptr, 0.0);
}

WavelengthPenalty wavelength_penalty_check(std::span<const double> prop_edges, std::span<const double> prop_weights,
                                           std::span<const double> fine_edges, const Tensor& fine_weights) {
  if (fine_weights.ndim() != 2 || fine_weights.rows() + 1 != fine_edges.size())
    throw ShapeError("wavelength_penalty_check: fine weights must be [K, L] with K+1 fine edges");
  if (prop_weights.size() + 1 != prop_edges.size())
    throw ShapeError("wavelength_penalty_check: need len(prop_edges) == len(prop_weights) + 1");
  check_interval(fine_edges, prop_edges);
  const std::size_t L = fine_weights.cols();
  WavelengthPenalty out;
  out.per_wavelength.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    out.per_wavelength[l] = interlevel_one(
        fine_edges, [&](std::size_t i) { return fine_weights.at(i, l); }, prop_edges, prop_weights.data(), nullptr, 0.0);
    out.total += out.per_wavelength[l];
  }
  out.total /= static_cast<double>(L);
  return out;
}

namespace ad {

namespace {

void check_batched(std::string_view op, const Tensor& density, std::span<const double> deltas, std::size_t K) {
  if (density.ndim() != 2 || K == 0 || density.rows() % K != 0)
    throw ShapeError(std::string(op) + ": density " + shape_str(density.shape()) + " is not [G*K, L] for K=" +
                     std::to_string(K));
  if (deltas.size() != density.rows())
    throw ShapeError(std::string(op) + ": expected " + std::to_string(density.rows()) + " deltas, got " +
                     std::to_string(deltas.size()));
  check_deltas(deltas);
  check_density(density);
}

}  // namespace

Var composite(Var density, Var radiance, std::span<const double> deltas, std::size_t K, const Tensor& background) {
  const Tensor& sig = density.value();
  const Tensor& col = radiance.value();
  check_batched("composite", sig, deltas, K);
  if (col.shape() != sig.shape())
    throw ShapeError("composite: radiance " + shape_str(col.shape()) + " does not match density " +
                     shape_str(sig.shape()));
  const std::size_t L = sig.cols(), G = sig.rows() / K;
  const bool per_group = background.numel() == G * L && background.numel() != L;
  if (!per_group && background.numel() != L)
    throw ShapeError("composite: background must hold L or G*L values, got " + shape_str(background.shape()));

  auto w = std::make_shared<std::vector<double>>(G * K * L);
  auto tnext = std::make_shared<std::vector<double>>(G * K * L);
  auto d = std::make_shared<std::vector<double>>(deltas.begin(), deltas.end());
  auto bg = std::make_shared<std::vector<double>>(background.data().begin(), background.data().end());
  Tensor out({G, L});
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l) {
      const double b = (*bg)[per_group ? g * L + l : l];
      double T = 1.0, acc = 0.0, p = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t r = g * K + k;
        const double trans = std::exp(-sig.at(r, l) * (*d)[r]);
        const double wk = T * (1.0 - trans);
        T *= trans;
        (*w)[r * L + l] = wk;
        (*tnext)[r * L + l] = T;
        p += wk * col.at(r, l);
        acc += wk;
      }
      out.at(g, l) = p + (1.0 - acc) * b;
    }

  const auto sid = density.id, cid = radiance.id;
  return density.tape->record(
      "composite", std::move(out), {sid, cid}, [=](Tape& t, const Tensor& gout) {
        const Tensor& c = t.value(cid);
        double* gs = t.requires_grad(sid) ? t.grad_buffer(sid).ptr() : nullptr;
        double* gc = t.requires_grad(cid) ? t.grad_buffer(cid).ptr() : nullptr;
        for (std::size_t g = 0; g < G; ++g)
          for (std::size_t l = 0; l < L; ++l) {
            const double up = gout.at(g, l);
            const double b = (*bg)[per_group ? g * L + l : l];
            double suffix = 0.0;
            for (std::size_t k = K; k-- > 0;) {
              const std::size_t r = g * K + k;
              const std::size_t e = r * L + l;
              const double cb = c.at(r, l) - b;
              if (gs) gs[e] += up * (*d)[r] * ((*tnext)[e] * cb - suffix);
              if (gc) gc[e] += up * (*w)[e];
              suffix += (*w)[e] * cb;
            }
          }
      });
}

Var composite_weights(Var density, std::span<const double> deltas, std::size_t K) {
  const Tensor& sig = density.value();
  check_batched("composite_weights", sig, deltas, K);
  const std::size_t L = sig.cols(), G = sig.rows() / K;
  auto tnext = std::make_shared<std::vector<double>>(G * K * L);
  auto d = std::make_shared<std::vector<double>>(deltas.begin(), deltas.end());
  Tensor out(sig.shape());
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l) {
      double T = 1.0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t r = g * K + k;
        const double trans = std::exp(-sig.at(r, l) * (*d)[r]);
        out.at(r, l) = T * (1.0 - trans);
        T *= trans;
        (*tnext)[r * L + l] = T;
      }
    }
  const auto sid = density.id;
  const auto oid = static_cast<Tape::NodeId>(density.tape->size());
  return density.tape->record("composite_weights", std::move(out), {sid}, [=](Tape& t, const Tensor& gout) {
    if (!t.requires_grad(sid)) return;
    const Tensor& w = t.value(oid);
    double* gs = t.grad_buffer(sid).ptr();
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t l = 0; l < L; ++l) {
        double suffix = 0.0;  // sum_{i>m} g_i w_i
        for (std::size_t k = K; k-- > 0;) {
          const std::size_t r = g * K + k;
          const std::size_t e = r * L + l;
          gs[e] += (*d)[r] * (gout[e] * (*tnext)[e] - suffix);
          suffix += gout[e] * w[e];
        }
      }
  });
}

Var recon_loss(Var predicted, Var target) { return mse(predicted, target); }

Var interlevel_loss(const Tensor& fine_edges, const Tensor& fine_weights, const Tensor& prop_edges, Var prop_weights) {
  const Tensor& pw = prop_weights.value();
  if (fine_edges.ndim() != 2 || prop_edges.ndim() != 2 || fine_edges.rows() != prop_edges.rows())
    throw ShapeError("interlevel_loss: edges must be [G, K+1] with matching G");
  const std::size_t G = fine_edges.rows(), K = fine_edges.cols() - 1, Kp = prop_edges.cols() - 1;
  if (fine_weights.ndim() != 2 || fine_weights.rows() != G * K)
    throw ShapeError("interlevel_loss: fine weights " + shape_str(fine_weights.shape()) + " are not [G*K, L]");
  if (pw.numel() != G * Kp)
    throw ShapeError("interlevel_loss: proposal weights " + shape_str(pw.shape()) + " are not [G*Kp, 1]");
  const std::size_t L = fine_weights.cols();

  auto fe = std::make_shared<const Tensor>(fine_edges);
  auto fw = std::make_shared<const Tensor>(fine_weights);
  auto pe = std::make_shared<const Tensor>(prop_edges);
  auto fine_row = [fe, K](std::size_t g) { return std::span<const double>(fe->ptr() + g * (K + 1), K + 1); };
  auto prop_row = [pe, Kp](std::size_t g) { return std::span<const double>(pe->ptr() + g * (Kp + 1), Kp + 1); };

  double total = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    check_interval(fine_row(g), prop_row(g));
    for (std::size_t l = 0; l < L; ++l)
      total += interlevel_one(
          fine_row(g), [&](std::size_t i) { return fw->at(g * K + i, l); }, prop_row(g), pw.ptr() + g * Kp, nullptr,
          0.0);
  }
  const double norm = 1.0 / static_cast<double>(G * L);
  const auto pid = prop_weights.id;
  return prop_weights.tape->record(
      "interlevel_loss", Tensor::scalar(total * norm), {pid}, [=](Tape& t, const Tensor& gout) {
        if (!t.requires_grad(pid)) return;
        const Tensor& p = t.value(pid);
        double* gp = t.grad_buffer(pid).ptr();
        const double s = gout[0] * norm;
        for (std::size_t g = 0; g < G; ++g)
          for (std::size_t l = 0; l < L; ++l)
            interlevel_one(
                fine_row(g), [&](std::size_t i) { return fw->at(g * K + i, l); }, prop_row(g), p.ptr() + g * Kp,
                gp + g * Kp, s);
      });
}

}  // namespace ad

}  // namespace hsnerf
