#include "protoblend/model.hpp"

#include <cmath>
#include <stdexcept>

#include "protoblend/rng.hpp"

namespace protoblend {
namespace {

Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng, bool zero = false) {
  Tensor w(Shape{cout, cin, k, k});
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  if (!zero)
    for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return Conv{Parameter(name + ".weight", std::move(w)), Parameter(name + ".bias", Tensor(Shape{cout})), k / 2};
}

Norm make_norm(const std::string& name, std::size_t c) {
  return Norm{Parameter(name + ".gamma", Tensor(Shape{c}, 1.0)), Parameter(name + ".beta", Tensor(Shape{c})),
              ops::BatchNormState{Tensor(Shape{c}, 0.0), Tensor(Shape{c}, 1.0)}};
}

}  // namespace

SegModel::SegModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  if (config_.num_classes < 2) throw std::invalid_argument("model needs at least two classes");
  if (config_.height % 2 || config_.width % 2) throw std::invalid_argument("model input extents must be even");
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  const std::size_t w = config_.base_width, cin = config_.in_channels, d = config_.proj_dim;
  enc1a_ = make_conv("enc1a", cin, w, 3, rng);
  enc1b_ = make_conv("enc1b", w, w, 3, rng);
  enc2a_ = make_conv("enc2a", w, 2 * w, 3, rng);
  enc2b_ = make_conv("enc2b", 2 * w, 2 * w, 3, rng);
  dec1_ = make_conv("dec1", 3 * w, w, 3, rng);
  dec2_ = make_conv("dec2", w, w, 3, rng);
  seg_ = make_conv("seg", w, config_.num_classes, 1, rng, config_.zero_init_seg_head);
  proj1_ = make_conv("proj1", w, d, 1, rng);
  proj2_ = make_conv("proj2", d, d, 1, rng);
  proj3_ = make_conv("proj3", d, d, 1, rng);
  enc1a_n_ = make_norm("enc1a_bn", w);
  enc1b_n_ = make_norm("enc1b_bn", w);
  enc2a_n_ = make_norm("enc2a_bn", 2 * w);
  enc2b_n_ = make_norm("enc2b_bn", 2 * w);
  dec1_n_ = make_norm("dec1_bn", w);
  dec2_n_ = make_norm("dec2_bn", w);
  proj1_n_ = make_norm("proj1_bn", d);
  proj2_n_ = make_norm("proj2_bn", d);
  proj3_n_ = make_norm("proj3_bn", d);
}

Var SegModel::conv(Graph& g, Conv& c, Var x, bool trainable) {
  Var w = trainable ? g.param(c.weight) : g.constant(c.weight.value);
  Var b = trainable ? g.param(c.bias) : g.constant(c.bias.value);
  return ops::conv2d(x, w, b, {1, c.padding});
}

Var SegModel::norm(Graph& g, Norm& n, Var x, Mode mode, bool trainable) {
  Var gamma = trainable ? g.param(n.gamma) : g.constant(n.gamma.value);
  Var beta = trainable ? g.param(n.beta) : g.constant(n.beta.value);
  return ops::batch_norm(x, gamma, beta, n.state, mode == Mode::kTrain, config_.bn_momentum);
}

Var SegModel::block(Graph& g, Conv& c, Norm* n, Var x, Mode mode, bool trainable) {
  Var y = conv(g, c, x, trainable);
  if (n != nullptr && config_.backbone_norm) y = norm(g, *n, y, mode, trainable);
  return ops::relu(y);
}

SegModel::Outputs SegModel::forward(Graph& g, const Tensor& images, Mode mode, bool trainable) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.height ||
      images.dim(3) != config_.width) {
    throw std::invalid_argument("model expects [N, " + std::to_string(config_.in_channels) + ", " +
                                std::to_string(config_.height) + ", " + std::to_string(config_.width) + "], got " +
                                shape_str(images.shape()));
  }
  Var x = g.constant(images);
  Var e1 = block(g, enc1a_, &enc1a_n_, x, mode, trainable);
  e1 = block(g, enc1b_, &enc1b_n_, e1, mode, trainable);
  Var e2 = ops::max_pool2d(e1, 2, 2);
  e2 = block(g, enc2a_, &enc2a_n_, e2, mode, trainable);
  e2 = block(g, enc2b_, &enc2b_n_, e2, mode, trainable);
  Var d = ops::concat_channels(ops::upsample_nearest(e2, 2), e1);
  d = block(g, dec1_, &dec1_n_, d, mode, trainable);
  Var features = block(g, dec2_, &dec2_n_, d, mode, trainable);

  Var logits = conv(g, seg_, features, trainable);

  Var z = norm(g, proj1_n_, ops::relu(conv(g, proj1_, features, trainable)), mode, trainable);
  z = norm(g, proj2_n_, ops::relu(conv(g, proj2_, z, trainable)), mode, trainable);
  z = norm(g, proj3_n_, ops::relu(conv(g, proj3_, z, trainable)), mode, trainable);
  return {logits, z};
}

std::vector<Parameter*> SegModel::parameters() {
  std::vector<Parameter*> out;
  for (Conv* c : {&enc1a_, &enc1b_, &enc2a_, &enc2b_, &dec1_, &dec2_, &seg_, &proj1_, &proj2_, &proj3_}) {
    out.push_back(&c->weight);
    out.push_back(&c->bias);
  }
  for (Norm* n : {&enc1a_n_, &enc1b_n_, &enc2a_n_, &enc2b_n_, &dec1_n_, &dec2_n_, &proj1_n_, &proj2_n_, &proj3_n_}) {
    out.push_back(&n->gamma);
    out.push_back(&n->beta);
  }
  return out;
}

std::vector<const Parameter*> SegModel::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<SegModel*>(this)->parameters()) out.push_back(p);
  return out;
}

std::vector<ops::BatchNormState*> SegModel::norm_states() {
  std::vector<ops::BatchNormState*> out;
  for (Norm* n : {&enc1a_n_, &enc1b_n_, &enc2a_n_, &enc2b_n_, &dec1_n_, &dec2_n_, &proj1_n_, &proj2_n_, &proj3_n_})
    out.push_back(&n->state);
  return out;
}

std::vector<const ops::BatchNormState*> SegModel::norm_states() const {
  std::vector<const ops::BatchNormState*> out;
  for (ops::BatchNormState* s : const_cast<SegModel*>(this)->norm_states()) out.push_back(s);
  return out;
}

std::size_t SegModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.numel();
  return n;
}

void SegModel::zero_grad() {
  for (Parameter* p : parameters()) p->grad.fill(0.0);
}

FeatureMaps forward_features(SegModel& model, const Tensor& image, Mode mode) {
  const ModelConfig& cfg = model.config();
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) {
    throw std::invalid_argument("forward_features expects [" + std::to_string(cfg.in_channels) + ", H, W], got " +
                                shape_str(image.shape()));
  }
  Graph g;
  auto out = model.forward(g, image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), mode, false);
  const Tensor& l = out.logits.value();
  const Tensor& z = out.embedding.value();
  return {l.reshaped({l.dim(1), l.dim(2), l.dim(3)}), z.reshaped({z.dim(1), z.dim(2), z.dim(3)})};
}

std::vector<int> argmax_classes(const Tensor& scores) {
  Tensor s = scores.rank() == 3 ? scores.reshaped({1, scores.dim(0), scores.dim(1), scores.dim(2)}) : scores;
  if (s.rank() != 4) throw std::invalid_argument("argmax_classes expects [N, C, H, W]");
  Graph g;
  const Tensor probs = ops::softmax_channels(g.constant(s)).value();
  const std::size_t n = s.dim(0), c = s.dim(1), hw = s.dim(2) * s.dim(3);
  std::vector<int> out(n * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < hw; ++k) {
      std::size_t best = 0;
      for (std::size_t ch = 1; ch < c; ++ch)
        if (probs[(b * c + ch) * hw + k] > probs[(b * c + best) * hw + k]) best = ch;
      out[b * hw + k] = static_cast<int>(best);
    }
  return out;
}

Tensor hard_prediction(SegModel& model, const Tensor& image) {
  const FeatureMaps maps = forward_features(model, image, Mode::kEval);
  const std::vector<int> labels = argmax_classes(maps.logits);
  Tensor out(Shape{image.dim(1), image.dim(2)});
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i];
  return out;
}

TeacherModel::TeacherModel(const SegModel& student, double gamma) : model_(student), gamma_(gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("EMA decay must lie in (0, 1)");
  for (Parameter* p : model_.parameters()) p->grad = Tensor{};
}

void TeacherModel::ema_update(const SegModel& student) { ema_update(student, gamma_); }

void TeacherModel::ema_update(const SegModel& student, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("EMA decay must lie in (0, 1)");
  auto dst = model_.parameters();
  auto src = student.parameters();
  if (dst.size() != src.size()) throw std::invalid_argument("ema_update: structural mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k]->value.shape() != src[k]->value.shape() || dst[k]->name != src[k]->name) {
      throw std::invalid_argument("ema_update: parameter mismatch at " + src[k]->name);
    }
  }
  for (std::size_t k = 0; k < dst.size(); ++k) {
    Tensor& t = dst[k]->value;
    const Tensor& s = src[k]->value;
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = gamma * t[i] + (1.0 - gamma) * s[i];
  }
  auto dn = model_.norm_states();
  auto sn = student.norm_states();
  for (std::size_t k = 0; k < dn.size(); ++k) *dn[k] = *sn[k];
}

}  // namespace protoblend
