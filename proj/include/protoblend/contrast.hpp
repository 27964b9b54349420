#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "protoblend/graph.hpp"

namespace protoblend {

// Per-class prototypes of one batch. Rows of `protos` ([C, D]) for classes
// with present[c] == false are zero and must not be used.
struct BatchPrototypes {
  Tensor protos;
  std::vector<double> weights;  // w_c, spatial mean of P_c
  std::vector<bool> present;
};

inline constexpr double kAbsentClassFloor = 1e-4;

// z: [N, D, H, W] (or [D, H, W]) features, p: [N, C, H, W] (or [C, H, W])
// probabilities. P~_c = sum Z P_c / sum P_c over the batch and all pixels;
// a class is absent when sum P_c < floor * N * H * W.
BatchPrototypes estimate_prototypes(const Tensor& z, const Tensor& p, double floor = kAbsentClassFloor);

enum class View { kWeak = 0, kStrong = 1 };

// Per-view, per-class FIFO queue of (prototype, weight) holding at most K
// entries.
class PrototypeBank {
 public:
  struct Entry {
    std::vector<double> proto;
    double weight = 0.0;
  };

  PrototypeBank() = default;
  PrototypeBank(std::size_t classes, std::size_t dim, std::size_t capacity);

  void push(View view, std::size_t c, std::vector<double> proto, double weight);
  // Pushes every present class of `batch`.
  void push(View view, const BatchPrototypes& batch);

  // sum w_k P_k / sum w_k over the queue of (view, c), or nothing when empty.
  // With weighted_numerator false the numerator drops w_k: sum P_k / sum w_k.
  std::optional<std::vector<double>> aggregate(View view, std::size_t c, bool weighted_numerator = true) const;

  // [C, D] aggregates of one view plus availability flags.
  BatchPrototypes aggregate_all(View view, bool weighted_numerator = true) const;

  const std::deque<Entry>& entries(View view, std::size_t c) const;
  std::size_t classes() const { return classes_; }
  std::size_t dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  void clear();

 private:
  std::deque<Entry>& queue(View view, std::size_t c);

  std::size_t classes_ = 0;
  std::size_t dim_ = 0;
  std::size_t capacity_ = 1;
  std::vector<std::deque<Entry>> queues_;  // view-major
};

enum class Similarity { kCosine, kDot };

struct ContrastOptions {
  double tau = 1.0;
  Similarity similarity = Similarity::kCosine;
};

// One direction of the cross-contrast: per-pixel InfoNCE of features `z`
// ([N, D, H, W], differentiable) against constant class prototypes of the
// other view, positive = prototype of labels[pixel]. Classes whose prototype
// is unavailable leave the denominator and their pixels are skipped; the mean
// runs over the remaining pixels. Returns an unbound Var when no pixel is
// left.
Var contrast_direction(Var z, const BatchPrototypes& other_view, const std::vector<int>& labels, ContrastOptions opt);

struct CrossContrast {
  Var weak;    // L^w: weak features vs strong-view prototypes
  Var strong;  // L^s: strong features vs weak-view prototypes
  Var total;   // (L^w + L^s) / 2, a disabled or empty direction counts as 0
};

CrossContrast cross_contrast_loss(Var z_weak, Var z_strong, const BatchPrototypes& protos_weak,
                                  const BatchPrototypes& protos_strong, const std::vector<int>& labels_weak,
                                  const std::vector<int>& labels_strong, ContrastOptions opt, bool weak_on = true,
                                  bool strong_on = true);

}  // namespace protoblend
