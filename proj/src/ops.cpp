#include "protoblend/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace protoblend::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw std::invalid_argument("op on an unbound Var");
  return *a.graph;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) { require_same_shape(a, b, op); }

// Elementwise unary op; `deriv(x, y)` is dy/dx.
template <typename F, typename D>
Var unary(const char* name, Var a, F f, D deriv) {
  const Tensor& x = a.value();
  Tensor y = Tensor::like(x);
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return graph_of(a).record(name, std::move(y), {a},
                            [&x, deriv](const Tensor& up, const Tensor& y, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              Tensor& gx = *gin[0];
                              for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += up[i] * deriv(x[i], y[i]);
                            });
}

// Spatial gather: out[i] = in[index[i]] with the given output shape.
Var gather(const char* name, Var a, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index) {
  const Tensor& x = a.value();
  Tensor y(std::move(out_shape));
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = x[idx[i]];
  return graph_of(a).record(name, std::move(y), {a},
                            [index](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              const auto& idx = *index;
                              for (std::size_t i = 0; i < idx.size(); ++i) (*gin[0])[idx[i]] += up[i];
                            });
}

// Splits an [N, C, ...] shape into (N, C, S) with S the product of the rest.
struct NCS {
  std::size_t n, c, s;
};
NCS split_ncs(const Tensor& t, const char* op) {
  if (t.rank() < 2) throw std::invalid_argument(std::string(op) + ": expected [N, C, ...], got " + shape_str(t.shape()));
  std::size_t s = 1;
  for (std::size_t i = 2; i < t.rank(); ++i) s *= t.dim(i);
  return {t.dim(0), t.dim(1), s};
}

// Lowers output rows [oy0, oy1) of one image into a [cin*kh*kw, rows*wo]
// patch matrix.
struct ConvGeom {
  std::size_t cin, h, w, kh, kw, stride, pad, ho, wo;
};

// Output columns [lo, hi) of a kernel tap read inside the input row.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeom& c, std::size_t kj) {
  std::size_t lo = 0;
  while (lo < c.wo && static_cast<long>(lo * c.stride + kj) < static_cast<long>(c.pad)) ++lo;
  std::size_t hi = lo;
  while (hi < c.wo && hi * c.stride + kj < c.w + c.pad) ++hi;
  return {lo, hi};
}

void im2col(const double* x, const ConvGeom& c, std::size_t oy0, std::size_t oy1, double* col) {
  const std::size_t plane = (oy1 - oy0) * c.wo;
  for (std::size_t ci = 0; ci < c.cin; ++ci) {
    for (std::size_t ki = 0; ki < c.kh; ++ki) {
      for (std::size_t kj = 0; kj < c.kw; ++kj) {
        double* row = col + ((ci * c.kh + ki) * c.kw + kj) * plane;
        const auto [lo, hi] = valid_cols(c, kj);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = static_cast<long>(oy * c.stride + ki) - static_cast<long>(c.pad);
          double* dst = row + (oy - oy0) * c.wo;
          if (iy < 0 || iy >= static_cast<long>(c.h)) {
            std::fill(dst, dst + c.wo, 0.0);
            continue;
          }
          const double* src = x + (ci * c.h + static_cast<std::size_t>(iy)) * c.w;
          std::fill(dst, dst + lo, 0.0);
          if (c.stride == 1) {
            std::copy(src + (lo + kj - c.pad), src + (hi + kj - c.pad), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * c.stride + kj - c.pad];
          }
          std::fill(dst + hi, dst + c.wo, 0.0);
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& c, std::size_t oy0, std::size_t oy1, double* x) {
  const std::size_t plane = (oy1 - oy0) * c.wo;
  for (std::size_t ci = 0; ci < c.cin; ++ci) {
    for (std::size_t ki = 0; ki < c.kh; ++ki) {
      for (std::size_t kj = 0; kj < c.kw; ++kj) {
        const double* row = col + ((ci * c.kh + ki) * c.kw + kj) * plane;
        const auto [lo, hi] = valid_cols(c, kj);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = static_cast<long>(oy * c.stride + ki) - static_cast<long>(c.pad);
          if (iy < 0 || iy >= static_cast<long>(c.h)) continue;
          double* dst = x + (ci * c.h + static_cast<std::size_t>(iy)) * c.w;
          const double* src = row + (oy - oy0) * c.wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * c.stride + kj - c.pad] += src[ox];
        }
      }
    }
  }
}

// Output rows per patch tile, chosen so a tile stays cache-resident.
std::size_t conv_tile_rows(const ConvGeom& c) {
  const std::size_t budget = 1u << 17;  // doubles
  const std::size_t per_row = c.cin * c.kh * c.kw * c.wo;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_row, 1), 1, c.ho);
}

}  // namespace

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same(x, y, "add");
  Tensor out = Tensor::like(x);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
  return graph_of(a).record("add", std::move(out), {a, b},
                            [](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              for (Tensor* g : gin) {
                                if (!g) continue;
                                for (std::size_t i = 0; i < up.numel(); ++i) (*g)[i] += up[i];
                              }
                            });
}

Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same(x, y, "sub");
  Tensor out = Tensor::like(x);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] - y[i];
  return graph_of(a).record("sub", std::move(out), {a, b},
                            [](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              for (std::size_t i = 0; i < up.numel(); ++i) {
                                if (gin[0]) (*gin[0])[i] += up[i];
                                if (gin[1]) (*gin[1])[i] -= up[i];
                              }
                            });
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same(x, y, "mul");
  Tensor out = Tensor::like(x);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
  return graph_of(a).record("mul", std::move(out), {a, b},
                            [&x, &y](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              for (std::size_t i = 0; i < up.numel(); ++i) {
                                if (gin[0]) (*gin[0])[i] += up[i] * y[i];
                                if (gin[1]) (*gin[1])[i] += up[i] * x[i];
                              }
                            });
}

Var div(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same(x, y, "div");
  Tensor out = Tensor::like(x);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] / y[i];
  return graph_of(a).record("div", std::move(out), {a, b},
                            [&y](const Tensor& up, const Tensor& out, std::span<Tensor* const> gin) {
                              for (std::size_t i = 0; i < up.numel(); ++i) {
                                if (gin[0]) (*gin[0])[i] += up[i] / y[i];
                                if (gin[1]) (*gin[1])[i] -= up[i] * out[i] / y[i];
                              }
                            });
}

Var scale(Var a, double s) {
  return unary("scale", a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary("exp", a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var a, double floor) {
  return unary("log", a, [floor](double v) { return std::log(std::max(v, floor)); },
               [floor](double x, double) { return x >= floor ? 1.0 / x : 0.0; });
}

Var square(Var a) {
  return unary("square", a, [](double v) { return v * v; }, [](double x, double) { return 2.0 * x; });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return graph_of(a).record("reshape", std::move(out), {a},
                            [](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              for (std::size_t i = 0; i < up.numel(); ++i) (*gin[0])[i] += up[i];
                            });
}

Var sum(Var a) {
  return graph_of(a).record("sum", Tensor::scalar(a.value().sum()), {a},
                            [](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              const double u = up[0];
                              for (double& v : gin[0]->data()) v += u;
                            });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  if (n == 0.0) throw std::invalid_argument("mean of an empty tensor");
  return graph_of(a).record("mean", Tensor::scalar(a.value().sum() / n), {a},
                            [n](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              const double u = up[0] / n;
                              for (double& v : gin[0]->data()) v += u;
                            });
}

Var channel_sum(Var a) {
  const Tensor& x = a.value();
  const auto [n, c, s] = split_ncs(x, "channel_sum");
  Tensor out(Shape{c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.ptr() + (b * c + ch) * s;
      double acc = 0.0;
      for (std::size_t k = 0; k < s; ++k) acc += p[k];
      out[ch] += acc;
    }
  return graph_of(a).record("channel_sum", std::move(out), {a},
                            [n, c, s](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              for (std::size_t b = 0; b < n; ++b)
                                for (std::size_t ch = 0; ch < c; ++ch) {
                                  double* p = gin[0]->ptr() + (b * c + ch) * s;
                                  for (std::size_t k = 0; k < s; ++k) p[k] += up[ch];
                                }
                            });
}

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank(x, 2, "matmul");
  require_rank(y, 2, "matmul");
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  if (y.dim(0) != k) {
    throw std::invalid_argument("matmul: inner extents differ " + shape_str(x.shape()) + " x " + shape_str(y.shape()));
  }
  Tensor out(Shape{m, n});
  MapMat(out.ptr(), m, n).noalias() = CMapMat(x.ptr(), m, k) * CMapMat(y.ptr(), k, n);
  return graph_of(a).record("matmul", std::move(out), {a, b},
                            [&x, &y, m, k, n](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              CMapMat dout(up.ptr(), m, n);
                              if (gin[0]) MapMat(gin[0]->ptr(), m, k).noalias() += dout * CMapMat(y.ptr(), k, n).transpose();
                              if (gin[1]) MapMat(gin[1]->ptr(), k, n).noalias() += CMapMat(x.ptr(), m, k).transpose() * dout;
                            });
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv: stride must be positive");
  if (in + 2 * padding < kernel) throw std::invalid_argument("conv: kernel larger than padded input");
  return (in + 2 * padding - kernel) / stride + 1;
}

Var conv2d(Var x_var, Var w_var, Var b_var, Conv2dOptions opt) {
  const Tensor& x = x_var.value();
  const Tensor& w = w_var.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                                std::to_string(w.dim(1)));
  }
  const bool has_bias = b_var.graph != nullptr;
  if (has_bias && b_var.value().shape() != Shape{cout}) throw std::invalid_argument("conv2d: bias shape mismatch");
  const ConvGeom geom{cin, h, wd, kh, kw, opt.stride, opt.padding, conv_out_extent(h, kh, opt.stride, opt.padding),
                      conv_out_extent(wd, kw, opt.stride, opt.padding)};
  const std::size_t kdim = cin * kh * kw, plane = geom.ho * geom.wo, in_plane = cin * h * wd;
  const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
  const std::size_t tile = conv_tile_rows(geom);

  Tensor out(Shape{n, cout, geom.ho, geom.wo});
  AlignedBuffer col(pointwise ? 0 : kdim * tile * geom.wo);
  CMapMat wmat(w.ptr(), cout, kdim);
  for (std::size_t b = 0; b < n; ++b) {
    const double* src = x.ptr() + b * in_plane;
    MapMat o(out.ptr() + b * cout * plane, cout, plane);
    if (pointwise) {
      o.noalias() = wmat * CMapMat(src, kdim, plane);
    } else {
      for (std::size_t oy0 = 0; oy0 < geom.ho; oy0 += tile) {
        const std::size_t oy1 = std::min(geom.ho, oy0 + tile), cols = (oy1 - oy0) * geom.wo;
        im2col(src, geom, oy0, oy1, col.data());
        o.middleCols(oy0 * geom.wo, cols).noalias() = wmat * CMapMat(col.data(), kdim, cols);
      }
    }
    if (has_bias) {
      const Tensor& bias = b_var.value();
      for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += bias[c];
    }
  }

  std::vector<Var> inputs{x_var, w_var};
  if (has_bias) inputs.push_back(b_var);
  return graph_of(x_var).record(
      "conv2d", std::move(out), std::move(inputs),
      [&x, &w, geom, n, cout, kdim, plane, in_plane, pointwise, tile, has_bias](
          const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
        AlignedBuffer col(pointwise ? 0 : kdim * tile * geom.wo);
        CMapMat wmat(w.ptr(), cout, kdim);
        for (std::size_t b = 0; b < n; ++b) {
          CMapMat dout(up.ptr() + b * cout * plane, cout, plane);
          const double* src = x.ptr() + b * in_plane;
          if (pointwise) {
            if (gin[1]) MapMat(gin[1]->ptr(), cout, kdim).noalias() += dout * CMapMat(src, kdim, plane).transpose();
            if (gin[0]) MapMat(gin[0]->ptr() + b * in_plane, kdim, plane).noalias() += wmat.transpose() * dout;
          } else {
            for (std::size_t oy0 = 0; oy0 < geom.ho; oy0 += tile) {
              const std::size_t oy1 = std::min(geom.ho, oy0 + tile), cols = (oy1 - oy0) * geom.wo;
              auto dtile = dout.middleCols(oy0 * geom.wo, cols);
              if (gin[1]) {
                im2col(src, geom, oy0, oy1, col.data());
                MapMat(gin[1]->ptr(), cout, kdim).noalias() += dtile * CMapMat(col.data(), kdim, cols).transpose();
              }
              if (gin[0]) {
                MapMat(col.data(), kdim, cols).noalias() = wmat.transpose() * dtile;
                col2im(col.data(), geom, oy0, oy1, gin[0]->ptr() + b * in_plane);
              }
            }
          }
          if (has_bias && gin[2]) {
            for (std::size_t c = 0; c < cout; ++c) (*gin[2])[c] += dout.row(c).sum();
          }
        }
      });
}

Var max_pool2d(Var a, std::size_t kernel, std::size_t stride) {
  const Tensor& x = a.value();
  require_rank(x, 4, "max_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = conv_out_extent(h, kernel, stride, 0);
  const std::size_t wo = conv_out_extent(w, kernel, stride, 0);
  Tensor out(Shape{n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + (oy * stride) * w + ox * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki)
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = base + (oy * stride + ki) * w + ox * stride + kj;
            if (x[idx] > x[best]) best = idx;
          }
        out[o] = x[best];
        (*argmax)[o] = best;
      }
  }
  return graph_of(a).record("max_pool2d", std::move(out), {a},
                            [argmax](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              for (std::size_t i = 0; i < argmax->size(); ++i) (*gin[0])[(*argmax)[i]] += up[i];
                            });
}

Var upsample_nearest(Var a, std::size_t factor) {
  const Tensor& x = a.value();
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  auto index = std::make_shared<std::vector<std::size_t>>(n * c * ho * wo);
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) (*index)[o++] = p * h * w + (y / factor) * w + xx / factor;
  return gather("upsample_nearest", a, Shape{n, c, ho, wo}, index);
}

Var concat_channels(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const auto [n, ca, s] = split_ncs(x, "concat_channels");
  const auto [nb, cb, sb] = split_ncs(y, "concat_channels");
  if (n != nb || s != sb || x.rank() != y.rank()) {
    throw std::invalid_argument("concat_channels: incompatible " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  Shape shape = x.shape();
  shape[1] = ca + cb;
  Tensor out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.ptr() + i * ca * s, ca * s, out.ptr() + i * (ca + cb) * s);
    std::copy_n(y.ptr() + i * cb * s, cb * s, out.ptr() + i * (ca + cb) * s + ca * s);
  }
  return graph_of(a).record("concat_channels", std::move(out), {a, b},
                            [n, ca, cb, s](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              for (std::size_t i = 0; i < n; ++i) {
                                const double* src = up.ptr() + i * (ca + cb) * s;
                                if (gin[0]) {
                                  double* d = gin[0]->ptr() + i * ca * s;
                                  for (std::size_t k = 0; k < ca * s; ++k) d[k] += src[k];
                                }
                                if (gin[1]) {
                                  double* d = gin[1]->ptr() + i * cb * s;
                                  for (std::size_t k = 0; k < cb * s; ++k) d[k] += src[ca * s + k];
                                }
                              }
                            });
}

Var slice_batch(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    throw std::invalid_argument("slice_batch: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(x.ptr() + begin * row, (end - begin) * row, out.ptr());
  return graph_of(a).record("slice_batch", std::move(out), {a},
                            [begin, row](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              double* d = gin[0]->ptr() + begin * row;
                              for (std::size_t k = 0; k < up.numel(); ++k) d[k] += up[k];
                            });
}

Var concat_batch(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() == 0 || x.rank() != y.rank() || !std::equal(x.shape().begin() + 1, x.shape().end(), y.shape().begin() + 1)) {
    throw std::invalid_argument("concat_batch: incompatible " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  Shape shape = x.shape();
  shape[0] += y.dim(0);
  Tensor out(shape);
  std::copy_n(x.ptr(), x.numel(), out.ptr());
  std::copy_n(y.ptr(), y.numel(), out.ptr() + x.numel());
  const std::size_t na = x.numel();
  return graph_of(a).record("concat_batch", std::move(out), {a, b},
                            [na](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                              if (gin[0]) {
                                for (std::size_t k = 0; k < na; ++k) (*gin[0])[k] += up[k];
                              }
                              if (gin[1]) {
                                for (std::size_t k = na; k < up.numel(); ++k) (*gin[1])[k - na] += up[k];
                              }
                            });
}

Var batch_norm(Var xv, Var gamma_v, Var beta_v, BatchNormState& state, bool training, double momentum, double eps) {
  const Tensor& x = xv.value();
  const Tensor& gamma = gamma_v.value();
  const Tensor& beta = beta_v.value();
  const auto [n, c, s] = split_ncs(x, "batch_norm");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw std::invalid_argument("batch_norm: affine shape mismatch");
  if (state.running_mean.shape() != Shape{c} || state.running_var.shape() != Shape{c}) {
    throw std::invalid_argument("batch_norm: running statistics shape mismatch");
  }
  const std::size_t m = n * s;
  if (training && m < 2) throw std::invalid_argument("batch_norm: training mode needs more than one value per channel");

  auto xhat = std::make_shared<Tensor>(Tensor::like(x));
  auto inv_std = std::make_shared<std::vector<double>>(c);
  Tensor out = Tensor::like(x);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < s; ++k) acc += x[(b * c + ch) * s + k];
      mu = acc / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < s; ++k) {
          const double d = x[(b * c + ch) * s + k] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(m);
      state.running_mean[ch] = momentum * state.running_mean[ch] + (1.0 - momentum) * mu;
      state.running_var[ch] =
          momentum * state.running_var[ch] + (1.0 - momentum) * sq / static_cast<double>(m - 1);
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t k = 0; k < s; ++k) {
        const std::size_t i = (b * c + ch) * s + k;
        const double xh = (x[i] - mu) * is;
        (*xhat)[i] = xh;
        out[i] = gamma[ch] * xh + beta[ch];
      }
  }
  return graph_of(xv).record(
      "batch_norm", std::move(out), {xv, gamma_v, beta_v},
      [xhat, inv_std, &gamma, n, c, s, m, training](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < s; ++k) {
              const std::size_t i = (b * c + ch) * s + k;
              sum_dy += up[i];
              sum_dy_xh += up[i] * (*xhat)[i];
            }
          if (gin[1]) (*gin[1])[ch] += sum_dy_xh;
          if (gin[2]) (*gin[2])[ch] += sum_dy;
          if (!gin[0]) continue;
          const double gscale = gamma[ch] * (*inv_std)[ch];
          const double md = static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k < s; ++k) {
              const std::size_t i = (b * c + ch) * s + k;
              if (training) {
                (*gin[0])[i] += gscale * (up[i] - sum_dy / md - (*xhat)[i] * sum_dy_xh / md);
              } else {
                (*gin[0])[i] += gscale * up[i];
              }
            }
        }
      });
}

Var softmax_channels(Var a) {
  const Tensor& x = a.value();
  const auto [n, c, s] = split_ncs(x, "softmax_channels");
  Tensor out = Tensor::like(x);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < s; ++k) {
      const std::size_t base = b * c * s + k;
      double mx = x[base];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, x[base + ch * s]);
      double z = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = std::exp(x[base + ch * s] - mx);
        out[base + ch * s] = e;
        z += e;
      }
      for (std::size_t ch = 0; ch < c; ++ch) out[base + ch * s] /= z;
    }
  return graph_of(a).record("softmax_channels", std::move(out), {a},
                            [n, c, s](const Tensor& up, const Tensor& y, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              for (std::size_t b = 0; b < n; ++b)
                                for (std::size_t k = 0; k < s; ++k) {
                                  const std::size_t base = b * c * s + k;
                                  double dot = 0.0;
                                  for (std::size_t ch = 0; ch < c; ++ch) dot += up[base + ch * s] * y[base + ch * s];
                                  for (std::size_t ch = 0; ch < c; ++ch) {
                                    const std::size_t i = base + ch * s;
                                    (*gin[0])[i] += y[i] * (up[i] - dot);
                                  }
                                }
                            });
}

Var log_softmax_channels(Var a) {
  const Tensor& x = a.value();
  const auto [n, c, s] = split_ncs(x, "log_softmax_channels");
  Tensor out = Tensor::like(x);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < s; ++k) {
      const std::size_t base = b * c * s + k;
      double mx = x[base];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, x[base + ch * s]);
      double z = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) z += std::exp(x[base + ch * s] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t ch = 0; ch < c; ++ch) out[base + ch * s] = x[base + ch * s] - lse;
    }
  return graph_of(a).record("log_softmax_channels", std::move(out), {a},
                            [n, c, s](const Tensor& up, const Tensor& y, std::span<Tensor* const> gin) {
                              if (!gin[0]) return;
                              for (std::size_t b = 0; b < n; ++b)
                                for (std::size_t k = 0; k < s; ++k) {
                                  const std::size_t base = b * c * s + k;
                                  double total = 0.0;
                                  for (std::size_t ch = 0; ch < c; ++ch) total += up[base + ch * s];
                                  for (std::size_t ch = 0; ch < c; ++ch) {
                                    const std::size_t i = base + ch * s;
                                    (*gin[0])[i] += up[i] - std::exp(y[i]) * total;
                                  }
                                }
                            });
}

Var l2_normalize_channels(Var a, double eps) {
  const Tensor& x = a.value();
  const auto [n, c, s] = split_ncs(x, "l2_normalize_channels");
  Tensor out = Tensor::like(x);
  auto norms = std::make_shared<std::vector<double>>(n * s);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < s; ++k) {
      const std::size_t base = b * c * s + k;
      double sq = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) sq += x[base + ch * s] * x[base + ch * s];
      const double nrm = std::max(std::sqrt(sq), eps);
      (*norms)[b * s + k] = nrm;
      for (std::size_t ch = 0; ch < c; ++ch) out[base + ch * s] = x[base + ch * s] / nrm;
    }
  return graph_of(a).record(
      "l2_normalize_channels", std::move(out), {a},
      [norms, n, c, s, eps](const Tensor& up, const Tensor& y, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t k = 0; k < s; ++k) {
            const std::size_t base = b * c * s + k;
            const double nrm = (*norms)[b * s + k];
            // Below eps the op is a fixed scaling by 1/eps.
            double dot = 0.0;
            if (nrm > eps)
              for (std::size_t ch = 0; ch < c; ++ch) dot += y[base + ch * s] * up[base + ch * s];
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t i = base + ch * s;
              (*gin[0])[i] += (up[i] - y[i] * dot) / nrm;
            }
          }
      });
}

Var nchw_to_rows(Var a) {
  const Tensor& x = a.value();
  require_rank(x, 4, "nchw_to_rows");
  const std::size_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  auto index = std::make_shared<std::vector<std::size_t>>(n * s * c);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < s; ++k)
      for (std::size_t ch = 0; ch < c; ++ch) (*index)[o++] = (b * c + ch) * s + k;
  return gather("nchw_to_rows", a, Shape{n * s, c}, index);
}

Var softmax_cross_entropy_rows(Var logits, const std::vector<int>& labels) {
  const Tensor& x = logits.value();
  require_rank(x, 2, "softmax_cross_entropy_rows");
  const std::size_t m = x.dim(0), c = x.dim(1);
  if (labels.size() != m) throw std::invalid_argument("softmax_cross_entropy_rows: label count mismatch");
  auto probs = std::make_shared<Tensor>(Tensor::like(x));
  auto lab = std::make_shared<std::vector<int>>(labels);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x.ptr() + r * c;
    double mx = row[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < c; ++k) (*probs)[r * c + k] = std::exp(row[k] - mx) / z;
    const int l = labels[r];
    if (l < 0) continue;
    if (static_cast<std::size_t>(l) >= c) throw std::invalid_argument("softmax_cross_entropy_rows: label out of range");
    total += mx + std::log(z) - row[l];
    ++count;
  }
  const double denom = count == 0 ? 1.0 : static_cast<double>(count);
  return graph_of(logits).record(
      "softmax_cross_entropy_rows", Tensor::scalar(total / denom), {logits},
      [probs, lab, m, c, denom](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
        if (!gin[0]) return;
        const double u = up[0] / denom;
        for (std::size_t r = 0; r < m; ++r) {
          const int l = (*lab)[r];
          if (l < 0) continue;
          for (std::size_t k = 0; k < c; ++k) {
            const double y = static_cast<int>(k) == l ? 1.0 : 0.0;
            (*gin[0])[r * c + k] += u * ((*probs)[r * c + k] - y);
          }
        }
      });
}

Var nll_probs(Var probs, const std::vector<int>& labels, double floor) {
  const Tensor& p = probs.value();
  const auto [n, c, s] = split_ncs(p, "nll_probs");
  if (labels.size() != n * s) throw std::invalid_argument("nll_probs: label count mismatch");
  auto idx = std::make_shared<std::vector<std::size_t>>(n * s);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < s; ++k) {
      const int l = labels[b * s + k];
      if (l < 0 || static_cast<std::size_t>(l) >= c) throw std::invalid_argument("nll_probs: label out of range");
      const std::size_t i = (b * c + static_cast<std::size_t>(l)) * s + k;
      (*idx)[b * s + k] = i;
      total -= std::log(std::max(p[i], floor));
    }
  const double m = static_cast<double>(n * s);
  return graph_of(probs).record("nll_probs", Tensor::scalar(total / m), {probs},
                                [idx, &p, m, floor](const Tensor& up, const Tensor&, std::span<Tensor* const> gin) {
                                  if (!gin[0]) return;
                                  for (std::size_t i : *idx) {
                                    if (p[i] >= floor) (*gin[0])[i] -= up[0] / (m * p[i]);
                                  }
                                });
}

Var flip(Var a, int axis) {
  const Tensor& x = a.value();
  if (x.rank() < 2) throw std::invalid_argument("flip: rank < 2");
  if (axis != -1 && axis != -2) throw std::invalid_argument("flip: axis must be -1 or -2");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), planes = x.numel() / (h * w);
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t si = axis == -2 ? h - 1 - i : i;
        const std::size_t sj = axis == -1 ? w - 1 - j : j;
        (*index)[o++] = p * h * w + si * w + sj;
      }
  return gather("flip", a, x.shape(), index);
}

Var rot90(Var a, int k) {
  const Tensor& x = a.value();
  if (x.rank() < 2) throw std::invalid_argument("rot90: rank < 2");
  k = ((k % 4) + 4) % 4;
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1), planes = x.numel() / (h * w);
  Shape shape = x.shape();
  const std::size_t oh = (k % 2) ? w : h, ow = (k % 2) ? h : w;
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t si = i, sj = j;
        switch (k) {
          case 1: si = j; sj = w - 1 - i; break;
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          case 3: si = h - 1 - j; sj = i; break;
          default: break;
        }
        (*index)[o++] = p * h * w + si * w + sj;
      }
  return gather("rot90", a, shape, index);
}

}  // namespace protoblend::ops
