#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hsnerf/compositing.hpp"
#include "hsnerf/error.hpp"
#include "test_support.hpp"

namespace hsnerf {
namespace {

using testing::random_tensor;

// Brute-force reference: transmittance recomputed from scratch as a product
// of per-sample survival probabilities.
struct Reference {
  std::vector<double> pixel, weights;
};

Reference brute_force(const Tensor& sigma, const Tensor& c, std::span<const double> delta, std::span<const double> bg) {
  const std::size_t K = sigma.rows(), L = sigma.cols();
  Reference r{std::vector<double>(L), std::vector<double>(K * L)};
  for (std::size_t l = 0; l < L; ++l) {
    double total_w = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      double T = 1.0;
      for (std::size_t j = 0; j < i; ++j) T *= 1.0 - (1.0 - std::exp(-sigma.at(j, l) * delta[j]));
      const double alpha = 1.0 - std::exp(-sigma.at(i, l) * delta[i]);
      const double w = T * alpha;
      r.weights[i * L + l] = w;
      r.pixel[l] += w * c.at(i, l);
      total_w += w;
    }
    r.pixel[l] += (1.0 - total_w) * bg[l];
  }
  return r;
}

struct Case {
  Tensor sigma, color;
  std::vector<double> delta, bg;
};

Case random_case(Rng& rng, std::size_t K, std::size_t L) {
  Case c{random_tensor({K, L}, rng, 0.0, 5.0), random_tensor({K, L}, rng, 0.0, 1.0), {}, {}};
  for (std::size_t k = 0; k < K; ++k) c.delta.push_back(rng.uniform(0.01, 0.5));
  for (std::size_t l = 0; l < L; ++l) c.bg.push_back(rng.uniform());
  return c;
}

TEST(Composite, EmptySpaceShowsBackground) {
  const Tensor zero({5, 3});
  const Tensor c({5, 3}, 0.4);
  const std::vector<double> d(5, 0.2), bg{0.1, 0.6, 1.0};
  const RenderOutput out = composite(zero, c, d, bg);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(out.pixel[l], bg[l]);
    EXPECT_EQ(out.accumulation[l], 0.0);
  }
}

TEST(Composite, OpaqueFrontSample) {
  Tensor s({4, 2}, 1.0);
  s.at(0, 0) = s.at(0, 1) = std::numeric_limits<double>::infinity();
  Tensor c({4, 2}, 0.9);
  c.at(0, 0) = 0.25;
  c.at(0, 1) = 0.75;
  const std::vector<double> d(4, 0.1), bg{0.0, 1.0};
  const RenderOutput out = composite(s, c, d, bg);
  EXPECT_EQ(out.pixel[0], 0.25);
  EXPECT_EQ(out.pixel[1], 0.75);
  EXPECT_EQ(out.weight(0, 0), 1.0);
  EXPECT_EQ(out.weight(1, 0), 0.0);
}

TEST(Composite, MatchesBruteForceOnRandomCases) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 1 + rng.below(16), L = 1 + rng.below(6);
    const Case c = random_case(rng, K, L);
    const RenderOutput out = composite(c.sigma, c.color, c.delta, c.bg);
    const Reference ref = brute_force(c.sigma, c.color, c.delta, c.bg);
    for (std::size_t l = 0; l < L; ++l) {
      EXPECT_NEAR(out.pixel[l], ref.pixel[l], 1e-12);
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double w = out.weight(k, l);
        EXPECT_NEAR(w, ref.weights[k * L + l], 1e-12);
        EXPECT_GE(w, 0.0);
        EXPECT_LE(w, 1.0);
        sum += w;
      }
      EXPECT_LE(sum, 1.0 + 1e-6);
      EXPECT_NEAR(out.accumulation[l], sum, 1e-12);
    }
  }
}

TEST(Composite, EightSamplesFourWavelengths) {
  Rng rng(2);
  const Case c = random_case(rng, 8, 4);
  const RenderOutput out = composite(c.sigma, c.color, c.delta, c.bg);
  const Reference ref = brute_force(c.sigma, c.color, c.delta, c.bg);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_NEAR(out.pixel[l], ref.pixel[l], 1e-12);
}

TEST(Composite, DeltaDensityScaleInvariance) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    Case c = random_case(rng, 10, 3);
    const RenderOutput a = composite(c.sigma, c.color, c.delta, c.bg);
    const double f = rng.uniform(0.1, 10.0);
    for (auto& d : c.delta) d *= f;
    for (auto& s : c.sigma.data()) s /= f;
    const RenderOutput b = composite(c.sigma, c.color, c.delta, c.bg);
    for (std::size_t l = 0; l < 3; ++l) EXPECT_NEAR(a.pixel[l], b.pixel[l], 1e-12);
  }
}

TEST(Composite, InvariantInputsGiveFlatSpectrum) {
  Rng rng(4);
  const std::size_t K = 12, L = 9;
  Tensor s({K, L}), c({K, L});
  for (std::size_t k = 0; k < K; ++k) {
    const double sv = rng.uniform(0, 4), cv = rng.uniform();
    for (std::size_t l = 0; l < L; ++l) s.at(k, l) = sv, c.at(k, l) = cv;
  }
  std::vector<double> d(K, 0.1), bg(L, 0.3);
  const RenderOutput out = composite(s, c, d, bg);
  for (std::size_t l = 1; l < L; ++l) EXPECT_EQ(out.pixel[l], out.pixel[0]);
}

TEST(Composite, DepthIsWeightedSampleDistance) {
  Tensor s({2, 1}, 1.0);
  Tensor c({2, 1}, 0.5);
  const std::vector<double> d{1.0, 1.0}, bg{0.0}, t{2.5, 3.5};
  const RenderOutput out = composite(s, c, d, bg, t);
  EXPECT_NEAR(out.depth[0], out.weight(0, 0) * 2.5 + out.weight(1, 0) * 3.5, 1e-15);
}

TEST(Composite, RejectsInvalidInputs) {
  Tensor s({2, 1}, 1.0), c({2, 1}, 0.5);
  const std::vector<double> d{0.1, 0.1}, bg{0.0};
  s.at(1, 0) = -0.1;
  EXPECT_THROW(composite(s, c, d, bg), NumericalError);
  s.at(1, 0) = std::nan("");
  EXPECT_THROW(composite(s, c, d, bg), NumericalError);
  s.at(1, 0) = 1.0;
  const std::vector<double> bad{0.1, -0.1};
  EXPECT_THROW(composite(s, c, bad, bg), NumericalError);
  EXPECT_THROW(composite(s, c, std::vector<double>{0.1}, bg), ShapeError);
}

TEST(CompositeTape, MatchesPlainCompositeAndPerRayBackground) {
  Rng rng(5);
  const std::size_t G = 3, K = 5, L = 2;
  const Tensor sigma = random_tensor({G * K, L}, rng, 0, 3), color = random_tensor({G * K, L}, rng, 0, 1);
  std::vector<double> d(G * K);
  for (auto& v : d) v = rng.uniform(0.05, 0.3);
  const Tensor bg = random_tensor({G, L}, rng, 0, 1);
  Tape tape(false);
  const Tensor pix = ad::composite(tape.constant(sigma), tape.constant(color), d, K, bg).value();
  const Tensor w = ad::composite_weights(tape.constant(sigma), d, K).value();
  ASSERT_EQ(pix.shape(), (Shape{G, L}));
  for (std::size_t g = 0; g < G; ++g) {
    Tensor s1({K, L}), c1({K, L});
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t l = 0; l < L; ++l) s1.at(k, l) = sigma.at(g * K + k, l), c1.at(k, l) = color.at(g * K + k, l);
    const std::vector<double> bgg{bg.at(g, 0), bg.at(g, 1)};
    const RenderOutput ref = composite(s1, c1, std::span(d).subspan(g * K, K), bgg);
    for (std::size_t l = 0; l < L; ++l) {
      EXPECT_NEAR(pix.at(g, l), ref.pixel[l], 1e-14);
      for (std::size_t k = 0; k < K; ++k) EXPECT_NEAR(w.at(g * K + k, l), ref.weight(k, l), 1e-15);
    }
  }
}

TEST(CompositeTape, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t G = 1 + rng.below(3), K = 1 + rng.below(6), L = 1 + rng.below(3);
    std::vector<double> d(G * K);
    for (auto& v : d) v = rng.uniform(0.05, 0.5);
    const Tensor bg = random_tensor({L}, rng, 0, 1);
    const auto seed = rng.next_u64();
    worst = std::max(worst, testing::gradcheck(
                                [&](Tape& tp, const std::vector<Var>& v) {
                                  return testing::project(tp, ad::composite(v[0], v[1], d, K, bg), seed);
                                },
                                {random_tensor({G * K, L}, rng, 0.1, 3.0), random_tensor({G * K, L}, rng, 0, 1)}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(CompositeWeightsTape, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t G = 1 + rng.below(3), K = 1 + rng.below(6), L = 1 + rng.below(3);
    std::vector<double> d(G * K);
    for (auto& v : d) v = rng.uniform(0.05, 0.5);
    const auto seed = rng.next_u64();
    worst = std::max(worst, testing::gradcheck(
                                [&](Tape& tp, const std::vector<Var>& v) {
                                  return testing::project(tp, ad::composite_weights(v[0], d, K), seed);
                                },
                                {random_tensor({G * K, L}, rng, 0.1, 3.0)}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(ReconLoss, Examples) {
  const std::vector<double> a{0.1, 0.5, 0.9};
  EXPECT_EQ(recon_loss(a, a), 0.0);
  const std::vector<double> b{0.2, 0.6, 1.0};
  EXPECT_NEAR(recon_loss(a, b), 0.01, 1e-15);
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(37), q(37);
    for (auto& v : p) v = rng.uniform();
    for (auto& v : q) v = rng.uniform();
    double s = 0.0;
    for (std::size_t i = 0; i < 37; ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
    EXPECT_NEAR(recon_loss(p, q), s / 37.0, 1e-12);
    Tape tape(false);
    EXPECT_NEAR(ad::recon_loss(tape.constant(Tensor::vector(p)), tape.constant(Tensor::vector(q))).value()[0],
                s / 37.0, 1e-12);
  }
  EXPECT_THROW(recon_loss(a, std::vector<double>{1.0}), ShapeError);
}

TEST(Interlevel, ZeroWhenBoundHolds) {
  const std::vector<double> edges{0.0, 0.25, 0.5, 1.0};
  const std::vector<double> fine{0.2, 0.3, 0.1};
  const std::vector<double> prop{0.3, 0.3, 0.4};
  EXPECT_EQ(interlevel_loss(edges, fine, edges, prop), 0.0);
  EXPECT_EQ(interlevel_loss(edges, fine, edges, fine), 0.0);
}

TEST(Interlevel, HandComputedPositiveCase) {
  const std::vector<double> fine_edges{0.2, 0.4};
  const std::vector<double> fine{0.5};
  const std::vector<double> prop_edges{0.0, 1.0};
  const std::vector<double> prop{0.2};
  EXPECT_NEAR(interlevel_loss(fine_edges, fine, prop_edges, prop), 0.3 * 0.3 / (0.2 + 1e-7), 1e-9);
}

TEST(Interlevel, BoundSumsOverlappingProposalBins) {
  // Fine bin (0.3, 0.7) overlaps proposal bins [0,0.4), [0.4,0.6), [0.6,1]; a
  // bin touching only at an edge does not count.
  const std::vector<double> fine_edges{0.0, 0.3, 0.7, 1.0};
  const std::vector<double> fine{0.0, 0.9, 0.0};
  const std::vector<double> prop_edges{0.0, 0.4, 0.6, 1.0};
  const std::vector<double> prop{0.1, 0.2, 0.3};
  const double b = 0.6;
  EXPECT_NEAR(interlevel_loss(fine_edges, fine, prop_edges, prop), 0.3 * 0.3 / (b + 1e-7), 1e-12);
  const std::vector<double> touching_edges{0.0, 0.4, 1.0};
  const std::vector<double> touching{0.5, 0.0};
  const std::vector<double> p2e{0.0, 0.4, 1.0};
  const std::vector<double> p2{0.1, 0.9};
  EXPECT_NEAR(interlevel_loss(touching_edges, touching, p2e, p2), 0.4 * 0.4 / (0.1 + 1e-7), 1e-12);
}

TEST(Interlevel, NonNegativeAndZeroIffBounded) {
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    const int K = 1 + static_cast<int>(rng.below(6));
    std::vector<double> e{0.0};
    for (int i = 0; i < K; ++i) e.push_back(e.back() + rng.uniform(0.1, 1.0));
    std::vector<double> f(static_cast<std::size_t>(K)), p(static_cast<std::size_t>(K));
    bool bounded = true;
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = rng.uniform();
      p[i] = rng.uniform();
      bounded = bounded && p[i] >= f[i];
    }
    const double loss = interlevel_loss(e, f, e, p);
    EXPECT_GE(loss, 0.0);
    EXPECT_EQ(loss == 0.0, bounded);
  }
}

TEST(Interlevel, MismatchedIntervalsRejected) {
  const std::vector<double> fine_edges{0.0, 1.5};
  const std::vector<double> fine{0.5};
  const std::vector<double> prop_edges{0.0, 1.0};
  const std::vector<double> prop{0.2};
  EXPECT_THROW(interlevel_loss(fine_edges, fine, prop_edges, prop), DataError);
}

TEST(WavelengthPenalty, SharedProposalAgainstEachWavelength) {
  const std::vector<double> edges{0.0, 0.5, 1.0};
  const std::vector<double> prop{0.5, 0.5};
  Tensor fine({2, 2});
  fine.at(0, 0) = 0.4, fine.at(1, 0) = 0.4;  // bounded
  fine.at(0, 1) = 0.8, fine.at(1, 1) = 0.1;  // first bin exceeds
  const WavelengthPenalty p = wavelength_penalty_check(edges, prop, edges, fine);
  EXPECT_EQ(p.per_wavelength[0], 0.0);
  EXPECT_GT(p.per_wavelength[1], 0.0);
  EXPECT_GT(p.total, 0.0);
  fine.at(0, 1) = 0.2;
  EXPECT_EQ(wavelength_penalty_check(edges, prop, edges, fine).total, 0.0);
}

TEST(WavelengthPenalty, TotalIsMeanOfIndependentLosses) {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const std::size_t K = 2 + rng.below(5), Kp = 2 + rng.below(7), L = 1 + rng.below(5);
    std::vector<double> fe{1.0}, pe{1.0};
    for (std::size_t i = 0; i < K; ++i) fe.push_back(fe.back() + rng.uniform(0.1, 1.0));
    for (std::size_t i = 0; i < Kp; ++i) pe.push_back(pe.back() + rng.uniform(0.1, 1.0));
    pe.back() = std::max(pe.back(), fe.back());
    std::vector<double> pw(Kp);
    for (auto& v : pw) v = rng.uniform(0.0, 0.3);
    const Tensor fw = random_tensor({K, L}, rng, 0.0, 0.5);
    const WavelengthPenalty p = wavelength_penalty_check(pe, pw, fe, fw);
    double mean = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> col(K);
      for (std::size_t k = 0; k < K; ++k) col[k] = fw.at(k, l);
      const double one = interlevel_loss(fe, col, pe, pw);
      EXPECT_DOUBLE_EQ(p.per_wavelength[l], one);
      mean += one / static_cast<double>(L);
    }
    EXPECT_NEAR(p.total, mean, 1e-12);
  }
}

struct Batch {
  Tensor fe, fw, pe, pw;
};

Batch random_batch(Rng& rng, std::size_t G, std::size_t K, std::size_t Kp, std::size_t L) {
  Batch b{Tensor({G, K + 1}), random_tensor({G * K, L}, rng, 0.0, 0.6), Tensor({G, Kp + 1}),
          random_tensor({G * Kp, 1}, rng, 0.01, 0.4)};
  for (std::size_t g = 0; g < G; ++g) {
    const double near = rng.uniform(0, 1), far = near + rng.uniform(0.5, 2.0);
    for (std::size_t k = 0; k <= K; ++k) b.fe.at(g, k) = near + (far - near) * std::pow(double(k) / K, 1.3);
    for (std::size_t k = 0; k <= Kp; ++k) b.pe.at(g, k) = near + (far - near) * double(k) / Kp;
  }
  return b;
}

TEST(InterlevelTape, EqualsMeanOfPerRayLosses) {
  Rng rng(11);
  const std::size_t G = 4, K = 5, Kp = 7, L = 3;
  const Batch b = random_batch(rng, G, K, Kp, L);
  Tape tape(false);
  const double v = ad::interlevel_loss(b.fe, b.fw, b.pe, tape.constant(b.pw)).value()[0];
  double ref = 0.0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> fe(K + 1), fw(K), pe(Kp + 1), pw(Kp);
      for (std::size_t k = 0; k <= K; ++k) fe[k] = b.fe.at(g, k);
      for (std::size_t k = 0; k < K; ++k) fw[k] = b.fw.at(g * K + k, l);
      for (std::size_t k = 0; k <= Kp; ++k) pe[k] = b.pe.at(g, k);
      for (std::size_t k = 0; k < Kp; ++k) pw[k] = b.pw[g * Kp + k];
      ref += interlevel_loss(fe, fw, pe, pw) / static_cast<double>(G * L);
    }
  EXPECT_NEAR(v, ref, 1e-13);
}

TEST(InterlevelTape, GradientFlowsToProposalOnly) {
  Rng rng(12);
  double worst = 0.0;
  int checked = 0;
  for (int t = 0; t < 300 && checked < 100; ++t) {
    const std::size_t G = 1 + rng.below(3), K = 2 + rng.below(4), Kp = 2 + rng.below(5), L = 1 + rng.below(3);
    const Batch b = random_batch(rng, G, K, Kp, L);
    // Skip draws where a residual sits within the stencil of the hinge.
    bool near_hinge = false;
    for (std::size_t g = 0; g < G && !near_hinge; ++g)
      for (std::size_t k = 0; k < K && !near_hinge; ++k) {
        double bound = 0.0;
        for (std::size_t j = 0; j < Kp; ++j)
          if (b.pe.at(g, j + 1) > b.fe.at(g, k) && b.pe.at(g, j) < b.fe.at(g, k + 1)) bound += b.pw[g * Kp + j];
        for (std::size_t l = 0; l < L; ++l) near_hinge = near_hinge || std::abs(b.fw.at(g * K + k, l) - bound) < 1e-3;
      }
    if (near_hinge) continue;
    ++checked;
    worst = std::max(worst, testing::gradcheck(
                                [&](Tape&, const std::vector<Var>& v) { return ad::interlevel_loss(b.fe, b.fw, b.pe, v[0]); },
                                {b.pw}));
  }
  EXPECT_GE(checked, 100);
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace hsnerf
