#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "protoblend/data.hpp"
#include "protoblend/sdb.hpp"

using namespace protoblend;

namespace {

Tensor random_image(Rng& rng, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  return oracle::random_tensor(rng, {h, w}, lo, hi);
}

Style oracle_style(const Tensor& t, double eps = kStyleEps) {
  const auto [mu, var] = oracle::two_pass_moments(t.data());
  return {mu, std::sqrt(var + eps)};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Style, ConstantImage) {
  const Style s = image_style(Tensor(Shape{4, 4}, 5.0));
  EXPECT_EQ(s.mu, 5.0);
  EXPECT_NEAR(s.sigma, std::sqrt(1e-5), 1e-15);
}

TEST(Style, HandArithmetic) {
  Tensor t(Shape{2, 2});
  t[1] = t[3] = 2.0;
  const Style s = image_style(t);
  EXPECT_EQ(s.mu, 1.0);
  EXPECT_NEAR(s.sigma, std::sqrt(1.0 + 1e-5), 1e-15);
}

TEST(Style, LargeRandomImageMatchesTwoPassOracle) {
  Rng rng(1);
  const Tensor t = random_image(rng, 256, 256, -3.0, 7.0);
  const Style s = image_style(t), o = oracle_style(t);
  EXPECT_NEAR(s.mu, o.mu, 1e-12);
  EXPECT_NEAR(s.sigma, o.sigma, 1e-12);
}

TEST(Normalize, ZeroMeanAndElementwiseOracle) {
  Rng rng(2);
  const Tensor t = random_image(rng, 16, 12, 0.2, 0.9);
  const Style s = image_style(t);
  const Tensor c = normalize_content(t, s);
  double mean = 0.0;
  for (double v : c.data()) mean += v;
  EXPECT_NEAR(mean / static_cast<double>(c.numel()), 0.0, 1e-10);
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(c[i], (t[i] - s.mu) / s.sigma, 1e-15);
}

TEST(Normalize, StandardizedImageIsNearlyUnchanged) {
  Rng rng(3);
  Tensor t = random_image(rng, 32, 32);
  const Style s0 = oracle_style(t, 0.0);
  for (double& v : t.data()) v = (v - s0.mu) / s0.sigma;
  EXPECT_LT(max_abs_diff(normalize_content(t, image_style(t)), t), 1e-4);
}

TEST(Blend, EtaOneReconstructsOriginal) {
  Rng rng(4);
  const Tensor x = random_image(rng, 20, 20);
  const Style sl = image_style(x);
  const Tensor out = blend_style(normalize_content(x, sl), sl, Style{-3.0, 9.0}, 1.0);
  EXPECT_LT(max_abs_diff(out, x), 1e-5);
}

TEST(Blend, HalfwayInterpolation) {
  const Style m = mix_styles({2.0, 4.0}, {0.0, 2.0}, 0.5);
  EXPECT_EQ(m.mu, 1.0);
  EXPECT_EQ(m.sigma, 3.0);
}

TEST(Blend, EtaZeroTakesTargetStyle) {
  Rng rng(5);
  const Tensor x = random_image(rng, 24, 24);
  const Tensor u = random_image(rng, 24, 24, 0.4, 0.6);
  const Style target = image_style(u);
  const Style got = image_style(blend_style(normalize_content(x, image_style(x)), image_style(x), target, 0.0));
  EXPECT_NEAR(got.mu, target.mu, 1e-4);
  EXPECT_NEAR(got.sigma, target.sigma, 1e-4);
}

TEST(Blend, RejectsEtaOutsideUnitInterval) {
  EXPECT_THROW(mix_styles({}, {}, -0.1), std::invalid_argument);
  EXPECT_THROW(mix_styles({}, {}, 1.5), std::invalid_argument);
}

TEST(Blend, MomentMatchingProperty) {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    const Tensor x = random_image(rng, 8 + rng.below(20), 8 + rng.below(20), -1.0, 2.0);
    const Style sl = image_style(x);
    const Style su{rng.uniform(-1, 1), rng.uniform(0.01, 2.0)};
    const double eta = rng.uniform();
    const Style m = mix_styles(sl, su, eta);
    const Style got = image_style(blend_style(normalize_content(x, sl), sl, su, eta));
    EXPECT_LT(std::abs(got.mu - m.mu), 1e-6);
    EXPECT_LE(std::abs(got.sigma - m.sigma), std::sqrt(kStyleEps) + 1e-6);
  }
}

TEST(Blend, MeanIsAffineInEta) {
  Rng rng(7);
  const Tensor x = random_image(rng, 16, 16);
  const Style sl = image_style(x), su{0.3, 0.05};
  const Tensor c = normalize_content(x, sl);
  auto mu_at = [&](double eta) { return image_style(blend_style(c, sl, su, eta)).mu; };
  const double m0 = mu_at(0.0), m1 = mu_at(1.0);
  for (double eta : {0.1, 0.25, 0.6, 0.9}) EXPECT_NEAR(mu_at(eta), (1 - eta) * m0 + eta * m1, 1e-12);
}

TEST(Blend, RestyleAndRestoreRecoversOriginal) {
  Rng rng(8);
  const Tensor x = random_image(rng, 16, 16);
  const Style sl = image_style(x);
  const Tensor styled = blend_style(normalize_content(x, sl), sl, {0.7, 0.2}, 0.0);
  const Tensor back = blend_style(normalize_content(styled, image_style(styled)), sl, sl, 1.0);
  EXPECT_LT(max_abs_diff(back, x), 1e-4);
}

TEST(EtaDistribution, ParseSampleAndName) {
  Rng rng(9);
  for (const char* name : {"uniform", "beta", "bernoulli", "fixed:0.25"}) {
    const EtaDistribution d = EtaDistribution::parse(name);
    EXPECT_EQ(d.name(), name);
    for (int i = 0; i < 200; ++i) {
      const double v = d.sample(rng);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      if (d.kind == EtaKind::kBernoulli) {
        EXPECT_TRUE(v == 0.0 || v == 1.0);
      }
      if (d.kind == EtaKind::kFixed) {
        EXPECT_EQ(v, 0.25);
      }
    }
  }
  EXPECT_THROW(EtaDistribution::parse("gauss"), std::invalid_argument);
  EXPECT_THROW(EtaDistribution::parse("fixed:2"), std::invalid_argument);
}

TEST(BlendBatch, SingleUnlabeledStyleForEveryone) {
  Rng rng(10);
  std::vector<Tensor> lab{random_image(rng, 8, 8), random_image(rng, 8, 8), random_image(rng, 8, 8)};
  std::vector<std::vector<int>> masks(3, std::vector<int>(64, 1));
  const std::vector<Tensor> unl{random_image(rng, 8, 8, 0.6, 0.7)};
  const BlendedBatch b = blend_batch(lab, masks, unl, EtaDistribution::parse("uniform"), rng);
  for (std::size_t s : b.style_source) EXPECT_EQ(s, 0u);
}

TEST(BlendBatch, PointMassAtOneKeepsStatistics) {
  Rng rng(11);
  std::vector<Tensor> lab, unl;
  for (int i = 0; i < 4; ++i) lab.push_back(random_image(rng, 10, 10)), unl.push_back(random_image(rng, 10, 10, 0.5, 0.6));
  const std::vector<std::vector<int>> masks(4, std::vector<int>(100, 0));
  const BlendedBatch b = blend_batch(lab, masks, unl, EtaDistribution::parse("fixed:1"), rng);
  for (std::size_t i = 0; i < 4; ++i) {
    const Style a = image_style(lab[i]), o = image_style(b.images[i]);
    EXPECT_NEAR(a.mu, o.mu, 1e-4);
    EXPECT_NEAR(a.sigma, o.sigma, 1e-4);
  }
}

TEST(BlendBatch, SeededRunIsReproducibleAndMatchesPerImageOracle) {
  Rng data(12);
  std::vector<Tensor> lab, unl;
  std::vector<std::vector<int>> masks;
  for (int i = 0; i < 5; ++i) {
    lab.push_back(random_image(data, 12, 12));
    std::vector<int> m(144);
    for (int& v : m) v = static_cast<int>(data.below(4));
    masks.push_back(m);
  }
  for (int i = 0; i < 9; ++i) unl.push_back(random_image(data, 12, 12, data.uniform(0, 0.5), 0.9));
  Rng r1(77), r2(77);
  const auto eta = EtaDistribution::parse("uniform");
  const BlendedBatch a = blend_batch(lab, masks, unl, eta, r1);
  const BlendedBatch b = blend_batch(lab, masks, unl, eta, r2);
  EXPECT_EQ(a.style_source, b.style_source);
  EXPECT_EQ(a.eta, b.eta);
  EXPECT_EQ(a.masks, masks);
  EXPECT_EQ(std::set<std::size_t>(a.style_source.begin(), a.style_source.end()).size(), lab.size());
  for (std::size_t i = 0; i < lab.size(); ++i) {
    EXPECT_EQ(oracle::values(a.images[i]), oracle::values(b.images[i]));
    const Style sl = image_style(lab[i]);
    const Tensor expected = blend_style(normalize_content(lab[i], sl), sl, image_style(unl[a.style_source[i]]), a.eta[i]);
    EXPECT_LT(max_abs_diff(a.images[i], expected), 1e-15);
  }
}

TEST(BlendBatch, FewerUnlabeledDrawsWithReplacement) {
  Rng rng(13);
  std::vector<Tensor> lab(6, Tensor(Shape{4, 4}, 0.5)), unl{random_image(rng, 4, 4), random_image(rng, 4, 4)};
  lab[0][0] = 0.9;
  const std::vector<std::vector<int>> masks(6, std::vector<int>(16, 0));
  const BlendedBatch b = blend_batch(lab, masks, unl, EtaDistribution::parse("uniform"), rng);
  for (std::size_t s : b.style_source) EXPECT_LT(s, 2u);
  EXPECT_THROW(blend_batch(lab, masks, {}, EtaDistribution::parse("uniform"), rng), std::invalid_argument);
}

namespace {

Sample constant_sample(const std::string& id, double v, std::size_t n = 4) {
  Sample s;
  s.id = id;
  s.image = Tensor(Shape{n, n}, v);
  s.mask.assign(n * n, 0);
  return s;
}

}  // namespace

TEST(MomentReport, IdenticalSplitsGiveIdenticalSummaries) {
  Rng rng(14);
  std::vector<Sample> samples;
  for (int i = 0; i < 6; ++i) {
    Sample s = constant_sample("x" + std::to_string(i), 0.0, 8);
    s.image = random_image(rng, 8, 8);
    samples.push_back(s);
  }
  const MomentReport r = moment_report({{"a", samples}, {"b", samples}});
  ASSERT_EQ(r.splits.size(), 2u);
  EXPECT_EQ(r.splits[0].mean_mu, r.splits[1].mean_mu);
  EXPECT_EQ(r.splits[0].mean_sigma, r.splits[1].mean_sigma);
  EXPECT_EQ(r.splits[0].sd_mu, r.splits[1].sd_mu);
  EXPECT_EQ(r.splits[0].sd_sigma, r.splits[1].sd_sigma);
}

TEST(MomentReport, ConstantImages) {
  const MomentReport r = moment_report({{"c", {constant_sample("a", 0.3), constant_sample("b", 0.3)}}});
  EXPECT_NEAR(r.splits[0].mean_mu, 0.3, 1e-15);
  EXPECT_NEAR(r.splits[0].mean_sigma, std::sqrt(kStyleEps), 1e-15);
  ASSERT_EQ(r.categories.size(), 1u);
  EXPECT_EQ(r.categories[0].pixels, 32u);
}

TEST(MomentReport, RejectsEmptyInput) {
  EXPECT_THROW(moment_report({}), std::invalid_argument);
  EXPECT_THROW(moment_report({{"e", {}}}), std::invalid_argument);
}

TEST(MomentReport, GeneratorOffsetIsRecovered) {
  DatasetSpec spec;
  spec.n_labeled = 60;
  spec.n_unlabeled = 60;
  spec.n_test = 0;
  spec.labeled_style = {0.1, 0.0, 1.0, 0.0};
  spec.unlabeled_style = {0.0, 0.0, 1.0, 0.0};
  const Dataset d = generate_dataset(spec);
  const MomentReport r = moment_report({{"labeled", d.labeled}, {"unlabeled", d.unlabeled}});
  const SplitMoments& l = r.splits[0];
  const SplitMoments& u = r.splits[1];
  const double se = std::sqrt(l.sd_mu * l.sd_mu / 60.0 + u.sd_mu * u.sd_mu / 60.0);
  EXPECT_NEAR(l.mean_mu - u.mean_mu, 0.1, 3.0 * se);

  spec.labeled_style = spec.unlabeled_style;
  const Dataset same = generate_dataset(spec);
  const MomentReport r0 = moment_report({{"labeled", same.labeled}, {"unlabeled", same.unlabeled}});
  const double se0 = std::sqrt(r0.splits[0].sd_mu * r0.splits[0].sd_mu / 60.0 + r0.splits[1].sd_mu * r0.splits[1].sd_mu / 60.0);
  EXPECT_NEAR(r0.splits[0].mean_mu - r0.splits[1].mean_mu, 0.0, 3.0 * se0);
}

TEST(MomentReport, CsvHasOneRowPerEntry) {
  const MomentReport r = moment_report({{"c", {constant_sample("a", 0.3), constant_sample("b", 0.5)}}});
  std::ostringstream a, b, c;
  r.write_images_csv(a);
  r.write_splits_csv(b);
  r.write_categories_csv(c);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(a.str()), 3);
  EXPECT_EQ(lines(b.str()), 2);
  EXPECT_EQ(lines(c.str()), 2);
}
