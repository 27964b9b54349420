#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "protoblend/data.hpp"
#include "protoblend/rng.hpp"
#include "protoblend/tensor.hpp"

namespace protoblend {

inline constexpr double kStyleEps = 1e-5;

struct Style {
  double mu = 0.0;
  double sigma = 1.0;  // sqrt(population variance + eps)
};

Style image_style(const Tensor& image, double eps = kStyleEps);
// (x - mu) / sigma
Tensor normalize_content(const Tensor& image, Style style);
// content * sigma_m + mu_m with mu_m, sigma_m the eta-mix of the two styles.
// Throws std::invalid_argument when eta is outside [0, 1].
Tensor blend_style(const Tensor& content, Style labeled, Style unlabeled, double eta);
Style mix_styles(Style labeled, Style unlabeled, double eta);

enum class EtaKind { kUniform, kBeta, kBernoulli, kFixed };

struct EtaDistribution {
  EtaKind kind = EtaKind::kUniform;
  double value = 1.0;  // used by kFixed

  double sample(Rng& rng) const;
  std::string name() const;
  // "uniform", "beta", "bernoulli" or "fixed:<value>".
  static EtaDistribution parse(const std::string& text);
};

struct BlendedBatch {
  std::vector<Tensor> images;
  std::vector<std::vector<int>> masks;  // copied unchanged
  std::vector<std::size_t> style_source;  // index into the unlabeled batch
  std::vector<double> eta;
  std::vector<Style> mixed;
};

// Re-styles every labeled image with the style of a random unlabeled image:
// distinct sources when U >= L, drawn with replacement otherwise; eta drawn
// independently per image.
BlendedBatch blend_batch(const std::vector<Tensor>& labeled, const std::vector<std::vector<int>>& masks,
                         const std::vector<Tensor>& unlabeled, const EtaDistribution& eta, Rng& rng,
                         double eps = kStyleEps);

struct NamedSplit {
  std::string name;
  std::vector<Sample> samples;
};

struct MomentRow {
  std::string split;
  std::string id;
  Style style;
};

struct SplitMoments {
  std::string split;
  std::size_t images = 0;
  double mean_mu = 0.0;
  double mean_sigma = 0.0;
  double sd_mu = 0.0;  // across images, sample standard deviation
  double sd_sigma = 0.0;
};

struct CategoryMoments {
  std::string split;
  int label = 0;
  std::size_t pixels = 0;
  Style style;  // pooled over every pixel carrying the label
};

struct MomentReport {
  std::vector<MomentRow> images;
  std::vector<SplitMoments> splits;
  std::vector<CategoryMoments> categories;

  void write_images_csv(std::ostream& os) const;
  void write_splits_csv(std::ostream& os) const;
  void write_categories_csv(std::ostream& os) const;
};

// Throws std::invalid_argument on an empty list or an empty split.
MomentReport moment_report(const std::vector<NamedSplit>& splits, double eps = kStyleEps);

}  // namespace protoblend
