#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoblend/tensor.hpp"

namespace protoblend {

enum class Split { kLabeled, kUnlabeled, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct Sample {
  std::string id;
  Split split = Split::kLabeled;
  Tensor image;           // [H, W], values k / 255
  std::vector<int> mask;  // H*W class indices, empty when unlabeled
};

// Intensity style of a split: every image gets x -> 0.5 + contrast * (x - 0.5)
// + offset with offset ~ U(offset_center +- offset_half) and contrast ~
// U(contrast_center +- contrast_half).
struct StyleRange {
  double offset_center = 0.0;
  double offset_half = 0.0;
  double contrast_center = 1.0;
  double contrast_half = 0.0;
};

struct DatasetSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 4;  // background, disk, rectangle, ring
  std::size_t n_labeled = 10;
  std::size_t n_unlabeled = 190;
  std::size_t n_test = 50;
  double noise_sigma = 0.02;
  std::uint64_t seed = 1;
  // Base intensity range per class, index = label.
  std::vector<std::pair<double, double>> class_intensity = {{0.15, 0.25}, {0.35, 0.45}, {0.55, 0.65}, {0.75, 0.85}};
  StyleRange labeled_style{0.08, 0.02, 1.2, 0.05};
  StyleRange unlabeled_style{0.0, 0.15, 1.0, 0.35};
  StyleRange test_style{0.0, 0.15, 1.0, 0.35};

  const StyleRange& style(Split s) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

// Draws one sample of `split`; a pure function of (spec, split, index).
Sample generate_sample(const DatasetSpec& spec, Split split, std::size_t index);

struct Dataset {
  std::vector<Sample> labeled, unlabeled, test;
};
Dataset generate_dataset(const DatasetSpec& spec);

// Writes root/{labeled,unlabeled,test}/{img,mask}/<id>.pgm and
// root/manifest.json. Unlabeled samples get no mask file.
void write_dataset(const Dataset& data, const DatasetSpec& spec, const std::filesystem::path& root);

// Binary 8-bit PGM (P5).
void write_pgm(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& h, std::size_t& w);
std::vector<std::uint8_t> quantize(const Tensor& image);
Tensor dequantize(const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w);

std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes);

// Samples of one split ordered by id. A missing or empty directory gives an
// empty list and a warning on stderr. Labeled and test samples must have a
// mask with labels < classes.
std::vector<Sample> load_split(const std::filesystem::path& root, Split split, std::size_t classes);
nlohmann::json read_manifest(const std::filesystem::path& root);

// Deterministic batch indices: iteration t draws L = U = batch_size / 2
// positions from each stream. A stream walks a fresh seeded permutation of
// its samples per pass, so the batch of iteration t is a pure function of
// (seed, t).
class BatchStream {
 public:
  BatchStream(std::size_t labeled, std::size_t unlabeled, std::size_t batch_size, std::uint64_t seed);

  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> indices(std::uint64_t t) const;
  std::size_t half() const { return half_; }

 private:
  std::vector<std::size_t> take(std::size_t pool, std::uint64_t stream, std::uint64_t t) const;

  std::size_t labeled_, unlabeled_, half_;
  std::uint64_t seed_;
};

}  // namespace protoblend
