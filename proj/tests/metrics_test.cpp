#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "protoblend/metrics.hpp"

using namespace protoblend;

namespace {

BinaryMask square(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t size) {
  BinaryMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
  for (std::size_t y = y0; y < y0 + size; ++y)
    for (std::size_t x = x0; x < x0 + size; ++x) m.px[y * w + x] = 1;
  return m;
}

std::vector<int> as_ints(const BinaryMask& m) { return {m.px.begin(), m.px.end()}; }

BinaryMask random_blobs(Rng& rng, std::size_t h, std::size_t w) {
  BinaryMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
  const int blobs = 1 + static_cast<int>(rng.below(3));
  for (int b = 0; b < blobs; ++b) {
    const double cy = rng.uniform(0, static_cast<double>(h)), cx = rng.uniform(0, static_cast<double>(w));
    const double r = rng.uniform(1.0, static_cast<double>(std::min(h, w)) / 3.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.px[y * w + x] = 1;
  }
  for (std::size_t i = 0; i < m.px.size(); ++i)
    if (rng.uniform() < 0.02) m.px[i] ^= 1;
  return m;
}

}  // namespace

TEST(Dsc, HandCases) {
  const BinaryMask a = square(6, 6, 1, 1, 2);
  EXPECT_EQ(dsc(a, a), 1.0);
  EXPECT_EQ(dsc(a, square(6, 6, 3, 3, 2)), 0.0);
  EXPECT_EQ(dsc(a, square(6, 6, 1, 2, 2)), 0.5);
  const BinaryMask empty{6, 6, std::vector<std::uint8_t>(36, 0)};
  EXPECT_EQ(dsc(empty, empty), 1.0);
  EXPECT_EQ(dsc(empty, a), 0.0);
}

TEST(Dsc, SymmetricAndOneOnlyForEqualMasks) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const BinaryMask a = random_blobs(rng, 16, 16), b = random_blobs(rng, 16, 16);
    EXPECT_EQ(dsc(a, b), dsc(b, a));
    EXPECT_EQ(dsc(a, b) == 1.0, a == b);
  }
}

TEST(Asd, IdenticalMasksGiveZero) {
  const BinaryMask a = square(10, 10, 2, 3, 4);
  EXPECT_EQ(*asd(a, a), 0.0);
}

TEST(Asd, SinglePixelTriangle) {
  BinaryMask s{8, 8, std::vector<std::uint8_t>(64, 0)}, g = s;
  s.px[0] = 1;
  g.px[3 * 8 + 4] = 1;
  EXPECT_EQ(*asd(s, g), 5.0);
}

TEST(Asd, ShiftedSquareMatchesBruteForce) {
  const BinaryMask s = square(20, 20, 4, 4, 10), g = square(20, 20, 5, 4, 10);
  EXPECT_EQ(*asd(s, g), oracle::brute_force_asd(as_ints(s), as_ints(g), 20, 20));
}

TEST(Asd, EmptyMaskHasNoValue) {
  const BinaryMask empty{5, 5, std::vector<std::uint8_t>(25, 0)};
  EXPECT_FALSE(asd(empty, square(5, 5, 1, 1, 2)));
  EXPECT_FALSE(asd(square(5, 5, 1, 1, 2), empty));
}

TEST(Asd, DistanceTransformEqualsBruteForceOnRandomMasks) {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t h = 8 + rng.below(57), w = 8 + rng.below(57);
    const BinaryMask s = random_blobs(rng, h, w), g = random_blobs(rng, h, w);
    if (s.count() == 0 || g.count() == 0) continue;
    const int hi = static_cast<int>(h), wi = static_cast<int>(w);
    EXPECT_EQ(*asd(s, g), oracle::brute_force_asd(as_ints(s), as_ints(g), hi, wi));
    EXPECT_EQ(*asd(g, s), oracle::brute_force_asd(as_ints(g), as_ints(s), hi, wi));
  }
}

TEST(Asd, IsOneDirectionalWithSymmetricVariant) {
  const BinaryMask small = square(20, 20, 8, 8, 2), big = square(20, 20, 2, 2, 14);
  const double ab = *asd(small, big), ba = *asd(big, small);
  EXPECT_NE(ab, ba);
  EXPECT_DOUBLE_EQ(*asd_symmetric(small, big), 0.5 * (ab + ba));
}

TEST(DistanceTransform, ExactSquaredDistances) {
  BinaryMask seeds{5, 7, std::vector<std::uint8_t>(35, 0)};
  seeds.px[2 * 7 + 1] = 1;
  seeds.px[4 * 7 + 6] = 1;
  const auto d = squared_distance_transform(seeds);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      const double a = (y - 2) * (y - 2) + (x - 1) * (x - 1), b = (y - 4) * (y - 4) + (x - 6) * (x - 6);
      EXPECT_EQ(d[y * 7 + x], std::min(a, b));
    }
  const auto inf = squared_distance_transform(BinaryMask{2, 2, {0, 0, 0, 0}});
  for (double v : inf) EXPECT_TRUE(std::isinf(v));
}

TEST(Boundary, SquareRing) {
  const auto b = boundary(square(6, 6, 1, 1, 4));
  EXPECT_EQ(b.size(), 12u);
  const auto edge = boundary(square(3, 3, 0, 0, 3));
  EXPECT_EQ(edge.size(), 8u);
}

TEST(Report, MeansAndMissingAsd) {
  // Two classes of foreground; class 2 absent everywhere in case b.
  const std::size_t h = 4, w = 4;
  std::vector<int> truth_a(16, 0), truth_b(16, 0), pred_a(16, 0), pred_b(16, 0);
  for (int i : {0, 1, 4, 5}) truth_a[i] = pred_a[i] = 1;
  for (int i : {10, 11}) truth_a[i] = 2;
  for (int i : {10, 14}) pred_a[i] = 2;
  for (int i : {5, 6}) truth_b[i] = 1;
  MetricReport r;
  r.classes = 3;
  r.cases.push_back(evaluate_case("a", pred_a, truth_a, h, w, 3));
  r.cases.push_back(evaluate_case("b", pred_b, truth_b, h, w, 3));
  EXPECT_EQ(r.cases[0].dsc[0], 1.0);
  EXPECT_EQ(r.cases[0].dsc[1], 0.5);
  EXPECT_EQ(r.cases[1].dsc[0], 0.0);
  EXPECT_EQ(r.cases[1].dsc[1], 1.0);
  EXPECT_FALSE(r.cases[1].asd[0]);
  const auto cd = r.class_dsc();
  EXPECT_DOUBLE_EQ(cd[0], 0.5);
  EXPECT_DOUBLE_EQ(cd[1], 0.75);
  EXPECT_DOUBLE_EQ(r.mean_dsc(), 0.625);
  EXPECT_EQ(r.asd_missing()[0], 1u);
  EXPECT_EQ(r.asd_missing()[1], 1u);
  EXPECT_DOUBLE_EQ(r.class_asd()[0], 0.0);

  std::ostringstream os;
  r.write_csv(os);
  const std::string csv = os.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j.at("mean_dsc").get<double>(), 0.625);
}

TEST(Report, AllBackgroundPredictionGivesZeroForegroundDsc) {
  std::vector<int> truth(64, 0), pred(64, 0);
  for (int i = 10; i < 20; ++i) truth[i] = 1;
  for (int i = 30; i < 40; ++i) truth[i] = 2;
  MetricReport r;
  r.classes = 3;
  r.cases.push_back(evaluate_case("x", pred, truth, 8, 8, 3));
  EXPECT_EQ(r.mean_dsc(), 0.0);
}
