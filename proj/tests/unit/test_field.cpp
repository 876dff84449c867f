#include <gtest/gtest.h>

#include <cmath>

#include "hsnerf/compositing.hpp"
#include "hsnerf/field.hpp"
#include "test_support.hpp"

namespace hsnerf {
namespace {

const std::vector<double> kChannels{450, 500, 550, 600, 650, 700, 750, 800};

FieldConfig variant(RadianceVariant r, DensityVariant d, ProposalVariant p) {
  FieldConfig c;
  c.radiance = r;
  c.density = d;
  c.proposal = p;
  c.channel_wavelengths = kChannels;
  c.lambda_min = 450;
  c.lambda_max = 800;
  return c;
}

FieldConfig tiny(FieldConfig c) {
  c.latent_dim = 3;
  c.lambda_terms = 2;
  c.decoder_hidden = 4;
  c.geometry_hidden = 4;
  c.color_hidden = 4;
  c.direction_terms = 1;
  c.position_grid = GridConfig{2, 2, 2.0, 2, 3, 12};
  c.proposal_networks = 1;
  c.proposal_grid = GridConfig{1, 2, 1.5, 2, 3, 10};
  c.proposal_hidden = 3;
  c.proposal_latent = 2;
  c.proposal_lambda_hidden = 2;
  return c;
}

struct Row {
  RadianceVariant r;
  DensityVariant d;
  ProposalVariant p;
};
const Row kRows[] = {{RadianceVariant::C1, DensityVariant::Sigma0, ProposalVariant::P0},
                     {RadianceVariant::C1, DensityVariant::Sigma1, ProposalVariant::P0},
                     {RadianceVariant::C, DensityVariant::Sigma0, ProposalVariant::P0},
                     {RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0},
                     {RadianceVariant::C2, DensityVariant::Sigma2, ProposalVariant::P0},
                     {RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda}};

struct Query {
  Tensor pos, dir;
};

Query random_query(std::size_t n, Rng& rng) {
  Query q{testing::random_tensor({n, 3}, rng, 0.0, 1.0), Tensor({n, 3})};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += std::pow(q.dir.at(i, k) = rng.uniform(-1, 1), 2);
    for (std::size_t k = 0; k < 3; ++k) q.dir.at(i, k) /= std::sqrt(s);
  }
  return q;
}

TEST(Field, DefaultIsContinuousRadianceScalarDensity) {
  const FieldConfig c;
  EXPECT_EQ(c.radiance, RadianceVariant::C);
  EXPECT_EQ(c.density, DensityVariant::Sigma0);
  EXPECT_EQ(c.proposal, ProposalVariant::P0);
}

TEST(Field, AllAblationRowsConstructAndEvaluate) {
  Rng rng(1);
  const Query q = random_query(5, rng);
  const std::vector<double> lams{500, 650, 800};
  for (const Row& row : kRows) {
    const auto f = build_field(variant(row.r, row.d, row.p), 3);
    Tape tape(false);
    const FieldOutput out = f->eval(tape, {q.pos, q.dir, lams});
    EXPECT_EQ(out.density.shape(), (Shape{5, 3}));
    EXPECT_EQ(out.radiance.shape(), (Shape{5, 3}));
    const Var prop = f->eval_proposal(tape, 0, q.pos, 600.0);
    EXPECT_EQ(prop.shape(), (Shape{5, 1}));
  }
}

TEST(Field, RgbDiscreteBuild) {
  FieldConfig c = variant(RadianceVariant::C1, DensityVariant::Sigma1, ProposalVariant::P0);
  c.channel_wavelengths = {503, 555, 622};
  c.lambda_min = 503;
  c.lambda_max = 622;
  const auto f = build_field(c, 0);
  EXPECT_EQ(f->params().find("field.color.2.weight")->value.cols(), 3u);
  EXPECT_EQ(f->params().find("field.geometry.1.weight")->value.cols(), 3u + 15u);
}

TEST(Field, IncoherentConfigsRejected) {
  FieldConfig c = variant(RadianceVariant::C, DensityVariant::Sigma1, ProposalVariant::P0);
  c.channel_wavelengths.clear();
  EXPECT_THROW(build_field(c, 0), ConfigError);
  EXPECT_THROW(build_field(variant(RadianceVariant::C2, DensityVariant::Sigma0, ProposalVariant::P0), 0), ConfigError);
  EXPECT_THROW(build_field(variant(RadianceVariant::C, DensityVariant::Sigma2, ProposalVariant::P0), 0), ConfigError);
  EXPECT_THROW(parse_radiance_variant("C3"), ConfigError);
}

TEST(Field, SameSeedIsBitwiseIdentical) {
  const auto c = variant(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda);
  const auto a = build_field(c, 42), b = build_field(c, 42), other = build_field(c, 43);
  ASSERT_EQ(a->params().size(), b->params().size());
  bool differs = false;
  for (std::size_t k = 0; k < a->params().size(); ++k)
    for (std::size_t i = 0; i < a->params()[k].value.numel(); ++i) {
      EXPECT_EQ(a->params()[k].value[i], b->params()[k].value[i]);
      differs = differs || a->params()[k].value[i] != other->params()[k].value[i];
    }
  EXPECT_TRUE(differs);
}

TEST(Field, DensityDecoderArchitecture) {
  const auto f = build_field(variant(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0), 0);
  const std::size_t in = 2 * 8 + 15;
  const std::size_t expect = in * 64 + 64 + 64 * 64 + 64 + 64 * 1 + 1;
  EXPECT_EQ(f->params().numel_with_prefix("field.density_decoder."), expect);
}

TEST(Field, ZeroDensityDecoderGivesSoftplusOfBias) {
  auto f = build_field(variant(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0), 0);
  for (auto& p : f->params())
    if (p->name.starts_with("field.density_decoder.")) p->value.fill(0.0);
  const double bias = 0.37;
  f->params().find("field.density_decoder.2.bias")->value[0] = bias;
  Rng rng(2);
  const Query q = random_query(4, rng);
  const std::vector<double> lams{450, 512, 777};
  Tape tape(false);
  const Tensor d = f->eval(tape, {q.pos, q.dir, lams}).density.value();
  for (double v : d.data()) EXPECT_NEAR(v, std::log1p(std::exp(bias - 1.0)), 1e-15);
}

TEST(Field, ProposalDimensions) {
  const auto f = build_field(variant(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda), 0);
  const Parameter* l0 = f->params().find("proposal0.lambda_mlp.0.weight");
  ASSERT_NE(l0, nullptr);
  EXPECT_EQ(l0->value.rows(), 4u + 7u);
  EXPECT_EQ(l0->value.cols(), 7u);
  EXPECT_EQ(f->params().find("proposal0.mlp.1.weight")->value.cols(), 7u);
}

TEST(Field, P0IgnoresWavelengthPlambdaNeedsIt) {
  Rng rng(3);
  const Query q = random_query(6, rng);
  const auto p0 = build_field(variant(RadianceVariant::C, DensityVariant::Sigma0, ProposalVariant::P0), 1);
  Tape tape(false);
  const Tensor a = p0->eval_proposal(tape, 1, q.pos, 450.0).value();
  const Tensor b = p0->eval_proposal(tape, 1, q.pos, 900.0).value();
  const Tensor c = p0->eval_proposal(tape, 1, q.pos, std::nullopt).value();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i], c[i]);
  }
  const auto pl = build_field(variant(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::PLambda), 1);
  EXPECT_THROW(pl->eval_proposal(tape, 0, q.pos, std::nullopt), ConfigError);
  EXPECT_THROW(pl->eval_proposal(tape, 2, q.pos, 500.0), ConfigError);
}

TEST(Field, ScalarDensityIsWavelengthInvariant) {
  Rng rng(4);
  const Query q = random_query(20, rng);
  std::vector<double> lams;
  for (int i = 0; i < 16; ++i) lams.push_back(450 + 20.0 * i + 3.3);
  const auto f = build_field(variant(RadianceVariant::C, DensityVariant::Sigma0, ProposalVariant::P0), 9);
  Tape tape(false);
  const Tensor d = f->eval(tape, {q.pos, q.dir, lams}).density.value();
  for (std::size_t i = 0; i < 20; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t l = 0; l < 16; ++l) mean += d.at(i, l) / 16.0;
    for (std::size_t l = 0; l < 16; ++l) var += std::pow(d.at(i, l) - mean, 2) / 16.0;
    EXPECT_LE(var, 1e-10);
  }
}

TEST(Field, ActivationRangesHoldForLargeParameters) {
  Rng rng(5);
  const Query q = random_query(30, rng);
  const std::vector<double> lams{450, 600, 800};
  for (const Row& row : kRows) {
    auto f = build_field(variant(row.r, row.d, row.p), 2);
    for (auto& p : f->params())
      for (auto& v : p->value.data()) v = rng.uniform(-20.0, 20.0);
    Tape tape(false);
    const FieldOutput out = f->eval(tape, {q.pos, q.dir, lams});
    for (double v : out.density.value().data()) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
    for (double v : out.radiance.value().data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Field, DiscreteSelectionIsExact) {
  Rng rng(6);
  const Query q = random_query(7, rng);
  const auto f = build_field(variant(RadianceVariant::C1, DensityVariant::Sigma1, ProposalVariant::P0), 3);
  Tape tape(false);
  const FieldOutput all = f->eval(tape, {q.pos, q.dir, kChannels});
  const std::vector<double> sub{kChannels[5], kChannels[2]};
  const FieldOutput some = f->eval(tape, {q.pos, q.dir, sub});
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(some.radiance.value().at(i, 0), all.radiance.value().at(i, 5));
    EXPECT_EQ(some.radiance.value().at(i, 1), all.radiance.value().at(i, 2));
    EXPECT_EQ(some.density.value().at(i, 0), all.density.value().at(i, 5));
  }
  const std::vector<double> off{kChannels[2] + 1e-7};
  EXPECT_NO_THROW(f->eval(tape, {q.pos, q.dir, off}));
  const std::vector<double> between{525.0};
  EXPECT_THROW(f->eval(tape, {q.pos, q.dir, between}), WavelengthError);
  EXPECT_FALSE(f->interpolates_wavelength());
}

TEST(Field, ContinuousRadianceIsLipschitzInWavelength) {
  Rng rng(7);
  const Query q = random_query(3, rng);
  const auto f = build_field(variant(RadianceVariant::C, DensityVariant::Sigma, ProposalVariant::P0), 4);
  double prev_gap = 1e9;
  for (int n : {800, 3200, 12800}) {
    std::vector<double> lams;
    for (int i = 0; i <= n; ++i) lams.push_back(450.0 + 350.0 * i / n);
    Tape tape(false);
    const Tensor c = f->eval(tape, {q.pos, q.dir, lams}).radiance.value();
    double gap = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (int l = 0; l < n; ++l)
        gap = std::max(gap, std::abs(c.at(i, static_cast<std::size_t>(l + 1)) - c.at(i, static_cast<std::size_t>(l))));
    // A 4x finer sweep shrinks the largest step about 4x.
    EXPECT_LT(gap, 0.35 * prev_gap);
    prev_gap = gap;
  }
}

// Rendered-pixel loss through every parameter block of a tiny field.
class FieldGradient : public ::testing::TestWithParam<int> {};

TEST_P(FieldGradient, EndToEndMatchesFiniteDifferences) {
  const Row row = kRows[GetParam()];
  FieldConfig c = tiny(variant(row.r, row.d, row.p));
  auto f = build_field(c, static_cast<std::uint64_t>(GetParam()));
  Rng rng(derive_seed(17, {static_cast<std::uint64_t>(GetParam())}));
  for (auto& p : f->params())
    for (auto& v : p->value.data()) v = rng.uniform(-0.8, 0.8);
  const std::size_t K = 4;
  const Query q = random_query(K, rng);
  const std::vector<double> lams{kChannels[1], kChannels[4], kChannels[6]};
  const std::vector<double> deltas{0.3, 0.2, 0.4, 0.25};
  const Tensor bg = Tensor::vector({0.1, 0.5, 0.9});
  auto loss = [&](Tape& t) {
    const FieldOutput out = f->eval(t, {q.pos, q.dir, lams});
    Var pix = ad::composite(out.density, out.radiance, deltas, K, bg);
    Var prop = f->eval_proposal(t, 0, q.pos, lams[0]);
    return ad::add(ad::mean(pix), ad::scale(ad::mean(prop), 0.1));
  };
  EXPECT_LT(testing::gradcheck_params(f->params(), loss), 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Rows, FieldGradient, ::testing::Range(0, 6));

TEST(Field, ConfigJsonRoundTrip) {
  FieldConfig c = variant(RadianceVariant::C2, DensityVariant::Sigma2, ProposalVariant::PLambda);
  c.decoder_hidden = 17;
  c.position_grid.levels = 5;
  nlohmann::json j = c;
  const FieldConfig back = j.get<FieldConfig>();
  EXPECT_EQ(back.radiance, RadianceVariant::C2);
  EXPECT_EQ(back.density, DensityVariant::Sigma2);
  EXPECT_EQ(back.proposal, ProposalVariant::PLambda);
  EXPECT_EQ(back.decoder_hidden, 17);
  EXPECT_EQ(back.position_grid.levels, 5);
  EXPECT_EQ(back.channel_wavelengths, kChannels);
}

}  // namespace
}  // namespace hsnerf
