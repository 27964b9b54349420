#pragma once

// Test-only reference implementations. Everything here is written directly
// from the defining formulas with plain loops and shares no code path with
// the library implementations it is compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "protoblend/graph.hpp"
#include "protoblend/rng.hpp"
#include "protoblend/tensor.hpp"

namespace oracle {

using protoblend::Graph;
using protoblend::Rng;
using protoblend::Shape;
using protoblend::Tensor;
using protoblend::Var;

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Relative error with a floor on the magnitude so near-zero gradients do not
// dominate: |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using LossFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares graph gradients of `loss` w.r.t. every element of `inputs` with
// central finite differences evaluated on fresh graphs.
inline GradCheck check_gradients(const LossFn& loss, const std::vector<Tensor>& inputs, double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(g.leaf(t));
    g.backward(loss(g, leaves));
    for (const Var& v : leaves) analytic.push_back(g.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& t : xs) leaves.push_back(g.leaf(t, false));
    return loss(g, leaves).value().item();
  };
  GradCheck out;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].numel(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + step;
      const double up = eval(xs);
      xs[k][i] = orig - step;
      const double down = eval(xs);
      xs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      out.max_rel_err = std::max(out.max_rel_err, rel_err(analytic[k][i], numeric));
      ++out.checked;
    }
  }
  return out;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Direct 2-D cross-correlation, zero padding.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
                           std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor y(Shape{n, cout, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += x.at({b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) * w.at({co, ci, i, j});
              }
          y.at({b, co, oy, ox}) = acc;
        }
  return y;
}

// Two-pass population mean / variance.
inline std::pair<double, double> two_pass_moments(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, var / static_cast<double>(v.size())};
}

// O(|S| * |G|) one-directional surface distance on 4-neighbour boundaries.
inline std::vector<std::pair<int, int>> boundary_pixels(const std::vector<int>& mask, int h, int w) {
  std::vector<std::pair<int, int>> out;
  auto in = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && mask[y * w + x] != 0; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in(y, x)) continue;
      if (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1)) out.emplace_back(y, x);
    }
  return out;
}

inline double brute_force_asd(const std::vector<int>& s, const std::vector<int>& g, int h, int w) {
  const auto bs = boundary_pixels(s, h, w);
  const auto bg = boundary_pixels(g, h, w);
  double total = 0.0;
  for (auto [sy, sx] : bs) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [gy, gx] : bg) {
      const double dy = sy - gy, dx = sx - gx;
      best = std::min(best, std::sqrt(dy * dy + dx * dx));
    }
    total += best;
  }
  return total / static_cast<double>(bs.size());
}

}  // namespace oracle
