#include "protoblend/contrast.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "protoblend/ops.hpp"

namespace protoblend {

namespace {

// Views a rank-3 map as a batch of one.
Tensor as_batch(const Tensor& t, const char* what) {
  if (t.rank() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  if (t.rank() != 4) throw std::invalid_argument(std::string(what) + " must be [N, ., H, W] or [., H, W]");
  return t;
}

}  // namespace

BatchPrototypes estimate_prototypes(const Tensor& z_in, const Tensor& p_in, double floor) {
  const Tensor z = as_batch(z_in, "features");
  const Tensor p = as_batch(p_in, "probabilities");
  const std::size_t n = z.dim(0), d = z.dim(1), hw = z.dim(2) * z.dim(3);
  const std::size_t classes = p.dim(1);
  if (p.dim(0) != n || p.dim(2) != z.dim(2) || p.dim(3) != z.dim(3)) {
    throw std::invalid_argument("estimate_prototypes: " + shape_str(z.shape()) + " vs " + shape_str(p.shape()));
  }
  BatchPrototypes out{Tensor(Shape{classes, d}), std::vector<double>(classes, 0.0), std::vector<bool>(classes, false)};
  const double pixels = static_cast<double>(n * hw);
  for (std::size_t c = 0; c < classes; ++c) {
    double mass = 0.0;
    double* row = out.protos.ptr() + c * d;
    for (std::size_t b = 0; b < n; ++b) {
      const double* pc = p.ptr() + (b * classes + c) * hw;
      for (std::size_t k = 0; k < hw; ++k) mass += pc[k];
      for (std::size_t j = 0; j < d; ++j) {
        const double* zj = z.ptr() + (b * d + j) * hw;
        double acc = 0.0;
        for (std::size_t k = 0; k < hw; ++k) acc += zj[k] * pc[k];
        row[j] += acc;
      }
    }
    out.weights[c] = mass / pixels;
    if (mass < floor * pixels) {
      std::fill(row, row + d, 0.0);
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) row[j] /= mass;
    out.present[c] = true;
  }
  return out;
}

PrototypeBank::PrototypeBank(std::size_t classes, std::size_t dim, std::size_t capacity)
    : classes_(classes), dim_(dim), capacity_(capacity), queues_(2 * classes) {
  if (capacity == 0) throw std::invalid_argument("memory bank capacity must be >= 1");
}

std::deque<PrototypeBank::Entry>& PrototypeBank::queue(View view, std::size_t c) {
  if (c >= classes_) throw std::out_of_range("bank class " + std::to_string(c));
  return queues_[static_cast<std::size_t>(view) * classes_ + c];
}

const std::deque<PrototypeBank::Entry>& PrototypeBank::entries(View view, std::size_t c) const {
  if (c >= classes_) throw std::out_of_range("bank class " + std::to_string(c));
  return queues_[static_cast<std::size_t>(view) * classes_ + c];
}

void PrototypeBank::push(View view, std::size_t c, std::vector<double> proto, double weight) {
  if (proto.size() != dim_) throw std::invalid_argument("bank prototype has wrong dimension");
  for (double v : proto)
    if (!std::isfinite(v)) throw std::domain_error("non-finite prototype pushed to bank");
  auto& q = queue(view, c);
  q.push_back({std::move(proto), weight});
  while (q.size() > capacity_) q.pop_front();
}

void PrototypeBank::push(View view, const BatchPrototypes& batch) {
  for (std::size_t c = 0; c < batch.present.size(); ++c) {
    if (!batch.present[c]) continue;
    const double* row = batch.protos.ptr() + c * dim_;
    push(view, c, std::vector<double>(row, row + dim_), batch.weights[c]);
  }
}

std::optional<std::vector<double>> PrototypeBank::aggregate(View view, std::size_t c, bool weighted_numerator) const {
  const auto& q = entries(view, c);
  if (q.empty()) return std::nullopt;
  std::vector<double> acc(dim_, 0.0);
  double wsum = 0.0;
  for (const Entry& e : q) {
    const double f = weighted_numerator ? e.weight : 1.0;
    for (std::size_t j = 0; j < dim_; ++j) acc[j] += f * e.proto[j];
    wsum += e.weight;
  }
  if (!(wsum > 0.0)) return std::nullopt;
  for (double& v : acc) v /= wsum;
  return acc;
}

BatchPrototypes PrototypeBank::aggregate_all(View view, bool weighted_numerator) const {
  BatchPrototypes out{Tensor(Shape{classes_, dim_}), std::vector<double>(classes_, 0.0),
                      std::vector<bool>(classes_, false)};
  for (std::size_t c = 0; c < classes_; ++c) {
    auto agg = aggregate(view, c, weighted_numerator);
    if (!agg) continue;
    std::copy(agg->begin(), agg->end(), out.protos.ptr() + c * dim_);
    out.present[c] = true;
    for (const Entry& e : entries(view, c)) out.weights[c] += e.weight;
  }
  return out;
}

void PrototypeBank::clear() {
  for (auto& q : queues_) q.clear();
}

Var contrast_direction(Var z, const BatchPrototypes& other, const std::vector<int>& labels, ContrastOptions opt) {
  if (!(opt.tau > 0.0)) throw std::invalid_argument("contrast temperature must be > 0");
  const Tensor& zv = z.value();
  if (zv.rank() != 4) throw std::invalid_argument("contrast features must be [N, D, H, W]");
  const std::size_t d = zv.dim(1);
  const std::size_t classes = other.present.size();
  if (other.protos.dim(1) != d) throw std::invalid_argument("prototype dimension differs from feature dimension");
  if (labels.size() != zv.dim(0) * zv.dim(2) * zv.dim(3)) throw std::invalid_argument("contrast label count mismatch");

  std::vector<int> column(classes, -1);
  std::size_t available = 0;
  for (std::size_t c = 0; c < classes; ++c)
    if (other.present[c]) column[c] = static_cast<int>(available++);
  if (available == 0) return {};

  // [D, A] matrix of the available prototypes, unit-normalized for cosine.
  Tensor keys(Shape{d, available});
  for (std::size_t c = 0; c < classes; ++c) {
    if (column[c] < 0) continue;
    const double* row = other.protos.ptr() + c * d;
    double norm = 1.0;
    if (opt.similarity == Similarity::kCosine) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += row[j] * row[j];
      norm = std::max(std::sqrt(sq), 1e-12);
    }
    for (std::size_t j = 0; j < d; ++j) keys[j * available + static_cast<std::size_t>(column[c])] = row[j] / norm;
  }

  std::vector<int> remapped(labels.size());
  bool any = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw std::invalid_argument("contrast label out of range");
    remapped[i] = column[static_cast<std::size_t>(l)];
    any = any || remapped[i] >= 0;
  }
  if (!any) return {};

  Var feats = opt.similarity == Similarity::kCosine ? ops::l2_normalize_channels(z) : z;
  Var logits = ops::scale(ops::matmul(ops::nchw_to_rows(feats), z.graph->constant(std::move(keys))), 1.0 / opt.tau);
  return ops::softmax_cross_entropy_rows(logits, remapped);
}

CrossContrast cross_contrast_loss(Var z_weak, Var z_strong, const BatchPrototypes& protos_weak,
                                  const BatchPrototypes& protos_strong, const std::vector<int>& labels_weak,
                                  const std::vector<int>& labels_strong, ContrastOptions opt, bool weak_on,
                                  bool strong_on) {
  CrossContrast out;
  if (weak_on) out.weak = contrast_direction(z_weak, protos_strong, labels_weak, opt);
  if (strong_on) out.strong = contrast_direction(z_strong, protos_weak, labels_strong, opt);
  if (out.weak.graph && out.strong.graph) {
    out.total = ops::scale(ops::add(out.weak, out.strong), 0.5);
  } else if (out.weak.graph) {
    out.total = ops::scale(out.weak, 0.5);
  } else if (out.strong.graph) {
    out.total = ops::scale(out.strong, 0.5);
  }
  return out;
}

}  // namespace protoblend
