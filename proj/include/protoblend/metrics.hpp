#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace protoblend {

// Row-major H x W boolean field, stored as 0/1 bytes.
struct BinaryMask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> px;

  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

BinaryMask class_mask(const std::vector<int>& labels, std::size_t h, std::size_t w, int c);

// 2|S n G| / (|S| + |G|); 1 when both are empty.
double dsc(const BinaryMask& s, const BinaryMask& g);

// Pixels of the mask with at least one 4-neighbour outside it (the image
// border counts as outside), raster order.
std::vector<std::size_t> boundary(const BinaryMask& m);

// Exact squared Euclidean distance from every pixel to the nearest set pixel
// of `seeds`; +inf everywhere when `seeds` is empty.
std::vector<double> squared_distance_transform(const BinaryMask& seeds);

// Mean over boundary pixels of S of the distance to the nearest boundary
// pixel of G. Nothing when S or G is empty.
std::optional<double> asd(const BinaryMask& s, const BinaryMask& g);
// Average of asd(S, G) and asd(G, S).
std::optional<double> asd_symmetric(const BinaryMask& s, const BinaryMask& g);

struct CaseMetrics {
  std::string id;
  std::vector<double> dsc;                  // per foreground class 1..C-1
  std::vector<std::optional<double>> asd;  // per foreground class
};

struct MetricReport {
  std::size_t classes = 0;
  bool symmetric_asd = false;
  std::vector<CaseMetrics> cases;

  // Mean over cases per foreground class; asd skips missing values.
  std::vector<double> class_dsc() const;
  std::vector<double> class_asd() const;
  std::vector<std::size_t> asd_missing() const;
  double mean_dsc() const;  // over classes of class_dsc
  double mean_asd() const;

  void write_csv(std::ostream& os) const;
  nlohmann::json to_json() const;
};

// Per-case metrics of index-label predictions vs ground truth.
CaseMetrics evaluate_case(const std::string& id, const std::vector<int>& pred, const std::vector<int>& truth,
                          std::size_t h, std::size_t w, std::size_t classes, bool symmetric_asd = false);

}  // namespace protoblend
