#pragma once

#include <vector>

#include "protoblend/graph.hpp"

namespace protoblend {

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kLogFloor = 1e-12;

// Mean over pixels of -log P[Y] (log floored at 1e-12). probs: [N, C, H, W];
// labels: N*H*W indices in raster order. Throws on a label >= C.
Var ce_loss(Var probs, const std::vector<int>& labels);

struct DiceOptions {
  double smooth = kDiceSmooth;
  bool include_background = true;
};

// 1 - mean_c (2 sum(P Y) + s) / (sum P + sum Y + s), sums over the batch and
// all pixels per class. `target` is a one-hot / soft map of the same shape.
Var dice_loss(Var probs, const Tensor& target, DiceOptions opt = {});
// Index-label overload: one-hot expands `labels` first.
Var dice_loss(Var probs, const std::vector<int>& labels, DiceOptions opt = {});

Tensor one_hot(const std::vector<int>& labels, std::size_t n, std::size_t classes, std::size_t h, std::size_t w);

// (ce + dice) / 2.
Var supervised_loss(Var probs, const std::vector<int>& labels, DiceOptions opt = {});

// Dice of the student's probabilities against the teacher's hard argmax
// (lowest index on ties). The teacher map is read as a plain value, so no
// gradient can reach whatever produced it.
Var consistency_loss(Var student_probs, const Tensor& teacher_probs, DiceOptions opt = {});

struct RampUp {
  double w_max = 1.0;
  double t_ramp = 1.0;

  // w_max * exp(-5 (1 - min(t, t_ramp) / t_ramp)^2)
  double operator()(double t) const;
};

struct LossWeights {
  double alpha = 0.1;  // consistency
  double beta = 1.0;   // contrast
};

struct LossParts {
  double sup = 0.0;
  double con = 0.0;
  double ctr = 0.0;
  double pixel = 0.0;  // optional strong-to-weak pixel dice, 0 when off
  double lambda = 0.0;
  double total = 0.0;
};

// L_sup + lambda * (alpha * (L_con + L_pixel) + beta * L_ctr) on graph values.
// Any of con / ctr / pixel may be unbound (Var{}) and then count as 0. Fills
// `parts`; throws std::domain_error naming the first non-finite component.
Var total_loss(Var sup, Var con, Var ctr, Var pixel, double lambda, LossWeights w, LossParts& parts);

// Scalar mirror of total_loss for logging and tests.
double compose_total(double sup, double con, double ctr, double pixel, double lambda, LossWeights w);

}  // namespace protoblend
