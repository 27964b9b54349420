#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "oracles.hpp"
#include "protoblend/data.hpp"
#include "protoblend/sdb.hpp"

using namespace protoblend;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("protoblend_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

DatasetSpec small_spec() {
  DatasetSpec s;
  s.height = s.width = 32;
  s.n_labeled = 3;
  s.n_unlabeled = 5;
  s.n_test = 4;
  return s;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Generator, SampleIsPureFunctionOfSpecSplitIndex) {
  const DatasetSpec spec = small_spec();
  const Sample a = generate_sample(spec, Split::kTest, 2), b = generate_sample(spec, Split::kTest, 2);
  EXPECT_EQ(a.id, "t0002");
  EXPECT_EQ(oracle::values(a.image), oracle::values(b.image));
  EXPECT_EQ(a.mask, b.mask);
  const Sample c = generate_sample(spec, Split::kTest, 3);
  EXPECT_NE(oracle::values(a.image), oracle::values(c.image));
}

TEST(Generator, ValuesAreQuantizedAndMasksInRange) {
  const Dataset d = generate_dataset(small_spec());
  for (const auto* split : {&d.labeled, &d.unlabeled, &d.test})
    for (const Sample& s : *split) {
      for (double v : s.image.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_DOUBLE_EQ(v * 255.0, std::round(v * 255.0));
      }
      if (s.split == Split::kUnlabeled) {
        EXPECT_TRUE(s.mask.empty());
        continue;
      }
      ASSERT_EQ(s.mask.size(), 32u * 32u);
      std::set<int> labels(s.mask.begin(), s.mask.end());
      EXPECT_GE(labels.size(), 2u);
      for (int l : labels) EXPECT_LT(l, 4);
    }
}

TEST(Generator, IdsAreUniqueAcrossSplits) {
  const Dataset d = generate_dataset(small_spec());
  std::set<std::string> ids;
  std::size_t total = 0;
  for (const auto* split : {&d.labeled, &d.unlabeled, &d.test})
    for (const Sample& s : *split) ids.insert(s.id), ++total;
  EXPECT_EQ(ids.size(), total);
}

TEST(Generator, CategoriesHaveOrderedIntensities) {
  DatasetSpec spec;
  spec.n_labeled = 20;
  spec.n_unlabeled = 0;
  spec.n_test = 0;
  const Dataset d = generate_dataset(spec);
  const MomentReport r = moment_report({{"labeled", d.labeled}});
  ASSERT_EQ(r.categories.size(), 4u);
  for (std::size_t c = 1; c < 4; ++c) {
    EXPECT_EQ(r.categories[c].label, static_cast<int>(c));
    EXPECT_GT(r.categories[c].style.mu, r.categories[c - 1].style.mu + 0.15);
  }
}

TEST(Generator, LabeledFractionIsConfigurable) {
  DatasetSpec spec;
  spec.n_labeled = 5;
  spec.n_unlabeled = 95;
  spec.n_test = 1;
  const Dataset d = generate_dataset(spec);
  EXPECT_EQ(d.labeled.size(), 5u);
  EXPECT_EQ(d.unlabeled.size(), 95u);
  spec.n_labeled = 0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Spec, JsonRoundTripAndUnknownKeys) {
  DatasetSpec s = small_spec();
  s.seed = 17;
  s.labeled_style.offset_center = 0.11;
  const nlohmann::json j = s;
  const DatasetSpec back = j.get<DatasetSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  nlohmann::json bad = j;
  bad["colour"] = 3;
  EXPECT_THROW(bad.get<DatasetSpec>(), std::invalid_argument);
}

TEST(Files, SameSeedWritesIdenticalBytes) {
  TempDir a("gen_a"), b("gen_b");
  const DatasetSpec spec = small_spec();
  write_dataset(generate_dataset(spec), spec, a.path());
  write_dataset(generate_dataset(spec), spec, b.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(bytes_of(e.path()), bytes_of(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 1u + 3u * 2u + 5u + 4u * 2u);
  EXPECT_FALSE(fs::exists(a.path() / "unlabeled" / "mask"));
}

TEST(Files, RoundTripCountsAndPixels) {
  TempDir dir("roundtrip");
  const DatasetSpec spec = small_spec();
  const Dataset d = generate_dataset(spec);
  write_dataset(d, spec, dir.path());
  const auto manifest = read_manifest(dir.path());
  EXPECT_EQ(manifest.at("spec").get<DatasetSpec>().seed, spec.seed);
  const auto lab = load_split(dir.path(), Split::kLabeled, 4);
  const auto unl = load_split(dir.path(), Split::kUnlabeled, 4);
  const auto tst = load_split(dir.path(), Split::kTest, 4);
  ASSERT_EQ(lab.size(), 3u);
  ASSERT_EQ(unl.size(), 5u);
  ASSERT_EQ(tst.size(), 4u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(lab[i].id, d.labeled[i].id);
    EXPECT_EQ(oracle::values(lab[i].image), oracle::values(d.labeled[i].image));
    EXPECT_EQ(lab[i].mask, d.labeled[i].mask);
  }
  for (const auto& [key, value] : manifest.at("checksums_fnv1a64").items()) {
    const auto raw = bytes_of(dir.path() / key);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(std::vector<std::uint8_t>(raw.begin(), raw.end()))));
    EXPECT_EQ(value.get<std::string>(), buf) << key;
  }
}

TEST(Files, RandomImagePgmRoundTripIsByteExact) {
  TempDir dir("pgm");
  Rng rng(3);
  std::vector<std::uint8_t> px(13 * 29);
  for (auto& v : px) v = static_cast<std::uint8_t>(rng.below(256));
  write_pgm(dir.path() / "x.pgm", 13, 29, px);
  std::size_t h = 0, w = 0;
  EXPECT_EQ(read_pgm(dir.path() / "x.pgm", h, w), px);
  EXPECT_EQ(h, 13u);
  EXPECT_EQ(w, 29u);
  EXPECT_EQ(quantize(dequantize(px, h, w)), px);
}

TEST(Files, PgmWithCommentsIsAccepted) {
  TempDir dir("pgmc");
  {
    std::ofstream out(dir.path() / "c.pgm", std::ios::binary);
    out << "P5\n# made by hand\n2 1\n255\n";
    out.put(static_cast<char>(7));
    out.put(static_cast<char>(200));
  }
  std::size_t h = 0, w = 0;
  EXPECT_EQ(read_pgm(dir.path() / "c.pgm", h, w), (std::vector<std::uint8_t>{7, 200}));
}

TEST(Files, EmptyDirectoryGivesEmptyList) {
  TempDir dir("empty");
  fs::create_directories(dir.path() / "test" / "img");
  testing::internal::CaptureStderr();
  EXPECT_TRUE(load_split(dir.path(), Split::kTest, 4).empty());
  EXPECT_NE(testing::internal::GetCapturedStderr().find("warning"), std::string::npos);
}

TEST(Files, OutOfRangeLabelIsRejected) {
  TempDir dir("badlabel");
  fs::create_directories(dir.path() / "labeled" / "img");
  fs::create_directories(dir.path() / "labeled" / "mask");
  write_pgm(dir.path() / "labeled" / "img" / "l0000.pgm", 1, 2, {1, 2});
  write_pgm(dir.path() / "labeled" / "mask" / "l0000.pgm", 1, 2, {0, 9});
  EXPECT_THROW(load_split(dir.path(), Split::kLabeled, 4), std::runtime_error);
}

TEST(Batches, BatchOf24SplitsEvenly) {
  const BatchStream s(10, 190, 24, 0);
  const auto [l, u] = s.indices(0);
  EXPECT_EQ(l.size(), 12u);
  EXPECT_EQ(u.size(), 12u);
  EXPECT_THROW(BatchStream(10, 190, 7, 0), std::invalid_argument);
}

TEST(Batches, SingleLabeledSampleAppearsEverywhere) {
  const BatchStream s(1, 50, 8, 3);
  for (std::uint64_t t = 0; t < 20; ++t)
    for (std::size_t i : s.indices(t).first) EXPECT_EQ(i, 0u);
}

TEST(Batches, SequencesAreReproducibleAndCoverThePool) {
  const BatchStream a(10, 190, 8, 5), b(10, 190, 8, 5);
  std::vector<std::size_t> seen(190, 0);
  for (std::uint64_t t = 0; t < 95; ++t) {
    EXPECT_EQ(a.indices(t), b.indices(t));
    for (std::size_t i : a.indices(t).second) ++seen[i];
  }
  for (std::size_t c : seen) EXPECT_EQ(c, 2u);
  const BatchStream other(10, 190, 8, 6);
  EXPECT_NE(a.indices(0), other.indices(0));
}
