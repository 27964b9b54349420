#include "protoblend/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "protoblend/model.hpp"
#include "protoblend/ops.hpp"

namespace protoblend {

Var ce_loss(Var probs, const std::vector<int>& labels) { return ops::nll_probs(probs, labels, kLogFloor); }

Tensor one_hot(const std::vector<int>& labels, std::size_t n, std::size_t classes, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  if (labels.size() != n * hw) throw std::invalid_argument("one_hot: label count mismatch");
  Tensor out(Shape{n, classes, h, w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < hw; ++k) {
      const int l = labels[b * hw + k];
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
      }
      out[(b * classes + static_cast<std::size_t>(l)) * hw + k] = 1.0;
    }
  return out;
}

Var dice_loss(Var probs, const Tensor& target, DiceOptions opt) {
  require_same_shape(probs.value(), target, "dice_loss");
  Graph& g = *probs.graph;
  const std::size_t classes = target.dim(1);
  Var y = g.constant(target);
  Var inter = ops::channel_sum(ops::mul(probs, y));
  Var psum = ops::channel_sum(probs);
  Tensor ysum_s = ops::channel_sum(y).value();
  for (double& v : ysum_s.data()) v += opt.smooth;
  Var num = ops::add_scalar(ops::scale(inter, 2.0), opt.smooth);
  Var den = ops::add(psum, g.constant(ysum_s));
  Var per_class = ops::div(num, den);
  if (!opt.include_background) {
    if (classes < 2) throw std::invalid_argument("dice_loss: no foreground class to keep");
    Tensor mask(Shape{classes}, 1.0);
    mask[0] = 0.0;
    Var kept = ops::sum(ops::mul(per_class, g.constant(mask)));
    return ops::add_scalar(ops::scale(kept, -1.0 / static_cast<double>(classes - 1)), 1.0);
  }
  return ops::add_scalar(ops::scale(ops::mean(per_class), -1.0), 1.0);
}

Var dice_loss(Var probs, const std::vector<int>& labels, DiceOptions opt) {
  const Tensor& p = probs.value();
  if (p.rank() != 4) throw std::invalid_argument("dice_loss expects [N, C, H, W] probabilities");
  return dice_loss(probs, one_hot(labels, p.dim(0), p.dim(1), p.dim(2), p.dim(3)), opt);
}

Var supervised_loss(Var probs, const std::vector<int>& labels, DiceOptions opt) {
  return ops::scale(ops::add(ce_loss(probs, labels), dice_loss(probs, labels, opt)), 0.5);
}

Var consistency_loss(Var student_probs, const Tensor& teacher_probs, DiceOptions opt) {
  require_same_shape(student_probs.value(), teacher_probs, "consistency_loss");
  return dice_loss(student_probs, argmax_classes(teacher_probs), opt);
}

double RampUp::operator()(double t) const {
  if (!(t_ramp >= 1.0)) throw std::invalid_argument("ramp-up length must be >= 1");
  if (t < 0.0) throw std::invalid_argument("ramp-up time must be >= 0");
  const double phase = 1.0 - std::min(t, t_ramp) / t_ramp;
  return w_max * std::exp(-5.0 * phase * phase);
}

double compose_total(double sup, double con, double ctr, double pixel, double lambda, LossWeights w) {
  return sup + lambda * (w.alpha * (con + pixel) + w.beta * ctr);
}

Var total_loss(Var sup, Var con, Var ctr, Var pixel, double lambda, LossWeights w, LossParts& parts) {
  auto value_of = [](Var v) { return v.graph ? v.value().item() : 0.0; };
  parts.sup = value_of(sup);
  parts.con = value_of(con);
  parts.ctr = value_of(ctr);
  parts.pixel = value_of(pixel);
  parts.lambda = lambda;
  for (auto [name, v] : {std::pair{"L_sup", parts.sup}, {"L_con", parts.con}, {"L_ctr", parts.ctr}, {"L_pixel", parts.pixel}}) {
    if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite loss component ") + name);
  }
  Var total = sup;
  if (con.graph) total = ops::add(total, ops::scale(con, lambda * w.alpha));
  if (pixel.graph) total = ops::add(total, ops::scale(pixel, lambda * w.alpha));
  if (ctr.graph) total = ops::add(total, ops::scale(ctr, lambda * w.beta));
  parts.total = total.value().item();
  return total;
}

}  // namespace protoblend
