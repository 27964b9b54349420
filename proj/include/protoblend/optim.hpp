#pragma once

#include <span>
#include <vector>

#include "protoblend/graph.hpp"

namespace protoblend {

// p <- p - lr * (g + weight_decay * p). Throws std::domain_error on a
// non-finite gradient and std::invalid_argument on lr <= 0 or weight_decay < 0.
void sgd_step(Tensor& param, const Tensor& grad, double lr, double weight_decay);

struct SgdOptions {
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.0;
};

// SGD over a fixed parameter list. With momentum = 0 each step is exactly
// sgd_step; otherwise a heavy-ball buffer v <- momentum * v + (g + wd * p)
// replaces the raw gradient.
class Sgd {
 public:
  explicit Sgd(SgdOptions options = {}) : options_(options) {}

  void step(std::span<Parameter* const> params, double lr);
  static void zero_grad(std::span<Parameter* const> params);

  const SgdOptions& options() const { return options_; }
  std::vector<Tensor>& velocity() { return velocity_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  SgdOptions options_;
  std::vector<Tensor> velocity_;
};

}  // namespace protoblend
