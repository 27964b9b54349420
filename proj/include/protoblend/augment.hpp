#pragma once

#include <cstdint>
#include <vector>

#include "protoblend/rng.hpp"
#include "protoblend/tensor.hpp"

namespace protoblend {

struct WeakParams {
  bool rotate = true;  // uniform over 0, 90, 180, 270 degrees
  double flip_p = 0.5;
};

struct WeakRecord {
  int quarter_turns = 0;  // counter-clockwise
  bool hflip = false;
  bool vflip = false;

  bool identity() const { return quarter_turns == 0 && !hflip && !vflip; }
  bool operator==(const WeakRecord&) const = default;
};

WeakRecord draw_weak(Rng& rng, const WeakParams& p);
// Rotation, then horizontal flip, then vertical flip. `image` is [H, W]
// (odd quarter turns swap the extents).
Tensor apply_weak(const Tensor& image, const WeakRecord& r);
std::vector<int> apply_weak(const std::vector<int>& mask, std::size_t h, std::size_t w, const WeakRecord& r);

struct WeakResult {
  Tensor image;
  std::vector<int> mask;  // empty when no mask was given
  WeakRecord record;
};
WeakResult weak_augment(const Tensor& image, const std::vector<int>* mask, std::uint64_t seed,
                        const WeakParams& p = {});

struct StrongParams {
  double brightness_p = 0.5;
  double brightness_scale_lo = 0.6, brightness_scale_hi = 1.4;
  double brightness_shift_lo = -0.2, brightness_shift_hi = 0.2;
  double contrast_p = 0.5;
  double contrast_lo = 0.6, contrast_hi = 1.4;
  double blur_p = 0.5;
  double blur_sigma_lo = 0.1, blur_sigma_hi = 1.0;
};

struct StrongRecord {
  bool brightness = false;
  bool additive = false;  // shift instead of scale
  double brightness_value = 1.0;
  bool contrast = false;
  double contrast_value = 1.0;
  bool blur = false;
  double blur_sigma = 0.0;

  bool identity() const { return !brightness && !contrast && !blur; }
};

StrongRecord draw_strong(Rng& rng, const StrongParams& p);
// Brightness, contrast about the image mean, 3x3 Gaussian blur with
// replicated borders, then a clamp to [0, 1]. Pixel positions are unchanged.
Tensor apply_strong(const Tensor& image, const StrongRecord& r);

struct StrongResult {
  Tensor image;
  StrongRecord record;
};
StrongResult strong_augment(const Tensor& image, std::uint64_t seed, const StrongParams& p = {});

// Normalized 3x3 Gaussian kernel, row-major.
std::vector<double> gaussian_kernel3(double sigma);

}  // namespace protoblend
