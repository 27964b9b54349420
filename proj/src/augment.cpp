#include "protoblend/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace protoblend {

namespace {

// Source index in an h x w raster for destination (y, x) after the weak
// transform; (oh, ow) are the output extents.
template <typename Fn>
void for_each_weak(std::size_t h, std::size_t w, const WeakRecord& r, Fn&& fn) {
  const int k = ((r.quarter_turns % 4) + 4) % 4;
  const std::size_t oh = (k % 2) ? w : h, ow = (k % 2) ? h : w;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      // Undo the flips first (they were applied last).
      std::size_t ry = r.vflip ? oh - 1 - y : y;
      std::size_t rx = r.hflip ? ow - 1 - x : x;
      std::size_t sy = ry, sx = rx;
      // Counter-clockwise quarter turns: out[i][j] = in[j][w-1-i] per turn.
      switch (k) {
        case 1: sy = rx, sx = w - 1 - ry; break;
        case 2: sy = h - 1 - ry, sx = w - 1 - rx; break;
        case 3: sy = h - 1 - rx, sx = ry; break;
        default: break;
      }
      fn(y * ow + x, sy * w + sx);
    }
}

}  // namespace

WeakRecord draw_weak(Rng& rng, const WeakParams& p) {
  WeakRecord r;
  r.quarter_turns = p.rotate ? static_cast<int>(rng.below(4)) : 0;
  r.hflip = rng.bernoulli(p.flip_p);
  r.vflip = rng.bernoulli(p.flip_p);
  return r;
}

Tensor apply_weak(const Tensor& image, const WeakRecord& r) {
  if (image.rank() != 2) throw std::invalid_argument("weak augmentation expects an [H, W] image");
  const std::size_t h = image.dim(0), w = image.dim(1);
  const bool swap = ((r.quarter_turns % 4) + 4) % 2 == 1;
  Tensor out(swap ? Shape{w, h} : Shape{h, w});
  for_each_weak(h, w, r, [&](std::size_t dst, std::size_t src) { out[dst] = image[src]; });
  return out;
}

std::vector<int> apply_weak(const std::vector<int>& mask, std::size_t h, std::size_t w, const WeakRecord& r) {
  if (mask.size() != h * w) throw std::invalid_argument("mask size does not match image");
  std::vector<int> out(mask.size());
  for_each_weak(h, w, r, [&](std::size_t dst, std::size_t src) { out[dst] = mask[src]; });
  return out;
}

WeakResult weak_augment(const Tensor& image, const std::vector<int>* mask, std::uint64_t seed, const WeakParams& p) {
  Rng rng(seed);
  WeakResult out;
  out.record = draw_weak(rng, p);
  out.image = apply_weak(image, out.record);
  if (mask) out.mask = apply_weak(*mask, image.dim(0), image.dim(1), out.record);
  return out;
}

StrongRecord draw_strong(Rng& rng, const StrongParams& p) {
  StrongRecord r;
  r.brightness = rng.bernoulli(p.brightness_p);
  if (r.brightness) {
    r.additive = rng.bernoulli(0.5);
    r.brightness_value = r.additive ? rng.uniform(p.brightness_shift_lo, p.brightness_shift_hi)
                                    : rng.uniform(p.brightness_scale_lo, p.brightness_scale_hi);
  }
  r.contrast = rng.bernoulli(p.contrast_p);
  if (r.contrast) r.contrast_value = rng.uniform(p.contrast_lo, p.contrast_hi);
  r.blur = rng.bernoulli(p.blur_p);
  if (r.blur) r.blur_sigma = rng.uniform(p.blur_sigma_lo, p.blur_sigma_hi);
  return r;
}

std::vector<double> gaussian_kernel3(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("blur sigma must be > 0");
  std::vector<double> k(9);
  double total = 0.0;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j) {
      const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>((i + 1) * 3 + (j + 1))] = v;
      total += v;
    }
  for (double& v : k) v /= total;
  return k;
}

Tensor apply_strong(const Tensor& image, const StrongRecord& r) {
  if (image.rank() != 2) throw std::invalid_argument("strong augmentation expects an [H, W] image");
  Tensor x = image;
  if (r.brightness) {
    for (double& v : x.data()) v = r.additive ? v + r.brightness_value : v * r.brightness_value;
  }
  if (r.contrast) {
    const double m = x.mean();
    for (double& v : x.data()) v = m + r.contrast_value * (v - m);
  }
  if (r.blur) {
    const auto k = gaussian_kernel3(r.blur_sigma);
    const long h = static_cast<long>(x.dim(0)), w = static_cast<long>(x.dim(1));
    Tensor y(x.shape());
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) {
        double acc = 0.0;
        for (long di = -1; di <= 1; ++di)
          for (long dj = -1; dj <= 1; ++dj) {
            const long si = std::clamp(i + di, 0L, h - 1), sj = std::clamp(j + dj, 0L, w - 1);
            acc += k[static_cast<std::size_t>((di + 1) * 3 + dj + 1)] * x[static_cast<std::size_t>(si * w + sj)];
          }
        y[static_cast<std::size_t>(i * w + j)] = acc;
      }
    x = std::move(y);
  }
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

StrongResult strong_augment(const Tensor& image, std::uint64_t seed, const StrongParams& p) {
  Rng rng(seed);
  StrongResult out;
  out.record = draw_strong(rng, p);
  out.image = apply_strong(image, out.record);
  return out;
}

}  // namespace protoblend
