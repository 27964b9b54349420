#include "protoblend/optim.hpp"

#include <stdexcept>

namespace protoblend {

void sgd_step(Tensor& param, const Tensor& grad, double lr, double weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd_step: weight_decay must be non-negative");
  require_same_shape(param, grad, "sgd_step");
  grad.check_finite("sgd_step gradient");
  for (std::size_t i = 0; i < param.numel(); ++i) param[i] -= lr * (grad[i] + weight_decay * param[i]);
}

void Sgd::step(std::span<Parameter* const> params, double lr) {
  if (options_.momentum == 0.0) {
    for (Parameter* p : params) sgd_step(p->value, p->grad, lr, options_.weight_decay);
    return;
  }
  if (!(lr > 0.0)) throw std::invalid_argument("Sgd: lr must be positive");
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (Parameter* p : params) velocity_.push_back(Tensor::like(p->value));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    p.grad.check_finite("Sgd gradient");
    Tensor& v = velocity_[k];
    require_same_shape(v, p.value, "Sgd velocity");
    for (std::size_t i = 0; i < v.numel(); ++i) {
      v[i] = options_.momentum * v[i] + p.grad[i] + options_.weight_decay * p.value[i];
      p.value[i] -= lr * v[i];
    }
  }
}

void Sgd::zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->grad.fill(0.0);
}

}  // namespace protoblend
