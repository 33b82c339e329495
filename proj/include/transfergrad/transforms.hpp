#pragma once

#include <cmath>
#include <cstdint>

#include "transfergrad/errors.hpp"
#include "transfergrad/rng.hpp"
#include "transfergrad/tensor.hpp"

namespace tg {

enum class ScaleFamily { Sim, Bounded, Uniform };

// Scale-copy schedule: number of copies plus, for the bounded/uniform
// families, the factor range [lower, upper] in [0,1].
struct ScaleSpec {
  ScaleFamily family = ScaleFamily::Uniform;
  int copies = 5;
  double lower = 0.1;
  double upper = 0.75;

  void validate() const {
    if (copies < 1) throw ConfigError("scale: copies must be >= 1");
    if (family != ScaleFamily::Sim) {
      if (lower < 0.0 || upper > 1.0 || lower > upper)
        throw ConfigError("scale: bounds must satisfy 0 <= lower <= upper <= 1");
    }
  }
};

// Mixing schedule: how many other-class images per scale copy, the mask
// range size, and the linear admix ratio.
struct MixSpec {
  int mix_count = 3;      // images sampled per draw
  double range = 0.5;     // mask range size r, mask values in [1-r, 1+r]
  double ratio = 0.2;     // linear admix ratio
  uint64_t seed = 0;      // optional salt for standalone sampling

  void validate() const {
    if (mix_count < 1) throw ConfigError("mix: mix_count must be >= 1");
    if (range < 0.0 || range > 1.0)
      throw ConfigError("mix: range must be in [0,1]");
    if (ratio < 0.0 || ratio >= 1.0)
      throw ConfigError("mix: ratio must be in [0,1)");
  }
};

// Knobs for the resize-pad and gradient-smoothing baselines.
struct BaselineParams {
  double resize_probability = 0.7;
  double resize_max_fraction = 0.1;  // shrink to >= (1-this) of the original
  int smooth_kernel = 7;             // odd
  double smooth_sigma = 7.0 / 3.0;   // kernel/3 when left at 0

  void validate() const {
    if (resize_probability < 0.0 || resize_probability > 1.0)
      throw ConfigError("baseline: resize_probability must be in [0,1]");
    if (resize_max_fraction < 0.0 || resize_max_fraction >= 1.0)
      throw ConfigError("baseline: resize_max_fraction must be in [0,1)");
    if (smooth_kernel < 1 || smooth_kernel % 2 == 0)
      throw ConfigError("baseline: smooth_kernel must be odd and >= 1");
  }
};

// ---------------------------------------------------------------------------
// Scale factors. All factor arithmetic runs in double; the image multiply
// casts once. sim_scale_factor(i) == bounded_scale_factor(i, 0, 1) bitwise,
// both being exactly 2^-i.
// ---------------------------------------------------------------------------

inline double sim_scale_factor(int i) {
  if (i < 0) throw ConfigError("sim_scale: index must be >= 0");
  return std::ldexp(1.0, -i);
}

inline double bounded_scale_factor(int i, double lower, double upper) {
  if (i < 0) throw ConfigError("bounded_scale: index must be >= 0");
  if (lower < 0.0 || upper > 1.0 || lower > upper)
    throw ConfigError("bounded_scale: bounds must satisfy 0 <= L <= H <= 1");
  return lower + (upper - lower) * std::ldexp(1.0, -i);
}

// Arithmetic progression from lower to upper over `copies` steps. Endpoints
// are exact by construction; interior points use the affine blend
// (L*(m-1-i) + H*i)/(m-1). A single copy degenerates to the upper bound.
inline double uniform_scale_factor(int i, int copies, double lower,
                                   double upper) {
  if (copies < 1) throw ConfigError("uniform_scale: copies must be >= 1");
  if (i < 0 || i >= copies)
    throw ConfigError("uniform_scale: index " + std::to_string(i) +
                      " out of range [0," + std::to_string(copies) + ")");
  if (lower > upper)
    throw ConfigError("uniform_scale: lower bound above upper bound");
  if (copies == 1) return upper;
  if (i == 0) return lower;
  if (i == copies - 1) return upper;
  const double m1 = double(copies - 1);
  return (lower * double(copies - 1 - i) + upper * double(i)) / m1;
}

template <typename S>
TensorT<S> sim_scale(const TensorT<S>& x, int i) {
  return scale(x, S(sim_scale_factor(i)));
}

template <typename S>
TensorT<S> bounded_scale(const TensorT<S>& x, int i, double lower,
                         double upper) {
  return scale(x, S(bounded_scale_factor(i, lower, upper)));
}

template <typename S>
TensorT<S> uniform_scale(const TensorT<S>& x, int i, int copies, double lower,
                         double upper) {
  return scale(x, S(uniform_scale_factor(i, copies, lower, upper)));
}

template <typename S>
TensorT<S> scale_copy(const TensorT<S>& x, int i, const ScaleSpec& spec) {
  switch (spec.family) {
    case ScaleFamily::Sim: return sim_scale(x, i);
    case ScaleFamily::Bounded: return bounded_scale(x, i, spec.lower, spec.upper);
    case ScaleFamily::Uniform:
      return uniform_scale(x, i, spec.copies, spec.lower, spec.upper);
  }
  throw ConfigError("scale_copy: unknown scale family");
}

// ---------------------------------------------------------------------------
// Mix masks.
// ---------------------------------------------------------------------------

// M = (1-r)*1 + 2r*x'; every element lands in [1-r, 1+r] for x' in [0,1].
template <typename S>
TensorT<S> make_mix_mask(const TensorT<S>& mix_image, double range) {
  if (range < 0.0 || range > 1.0)
    throw ConfigError("make_mix_mask: range must be in [0,1]");
  const S one_minus_r = S(1.0 - range);
  const S two_r = S(2.0 * range);
  return TensorT<S>(mix_image.shape(),
                    one_minus_r + two_r * mix_image.array());
}

// x^m = clip(M .* x, 0, 1).
template <typename S>
TensorT<S> apply_mix_mask(const TensorT<S>& x, const TensorT<S>& mask) {
  detail::require_same_shape("apply_mix_mask", x, mask);
  return clamp(mul(x, mask), S(0), S(1));
}

// Linear mixup x + ratio * x'. The caller composes the scale step on top,
// so the source-image portion is carried by the scale factor.
template <typename S>
TensorT<S> admix_mix(const TensorT<S>& x, const TensorT<S>& mix_image,
                     double ratio) {
  detail::require_same_shape("admix_mix", x, mix_image);
  if (ratio < 0.0 || ratio >= 1.0)
    throw ConfigError("admix_mix: ratio must be in [0,1)");
  return TensorT<S>(x.shape(), x.array() + S(ratio) * mix_image.array());
}

// ---------------------------------------------------------------------------
// Clipping.
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> clip_unit(const TensorT<S>& x) {
  return clamp(x, S(0), S(1));
}

// Project onto the L-inf ball of radius eps around the anchor.
template <typename S>
TensorT<S> clip_ball(const TensorT<S>& x, const TensorT<S>& anchor, S eps) {
  detail::require_same_shape("clip_ball", x, anchor);
  TensorT<S> out(x.shape());
  for (Index i = 0; i < x.numel(); ++i) {
    const S lo = anchor[i] - eps;
    const S hi = anchor[i] + eps;
    out[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline transforms.
// ---------------------------------------------------------------------------

// Bilinear resize of a (C,H,W) image to (C,new_h,new_w).
template <typename S>
TensorT<S> bilinear_resize(const TensorT<S>& x, Index new_h, Index new_w) {
  x.require_rank(3, "bilinear_resize input");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (new_h < 1 || new_w < 1)
    throw ShapeError("bilinear_resize: target size must be positive");
  TensorT<S> out({c, new_h, new_w});
  const double sy = new_h > 1 ? double(h - 1) / double(new_h - 1) : 0.0;
  const double sx = new_w > 1 ? double(w - 1) / double(new_w - 1) : 0.0;
  for (Index ch = 0; ch < c; ++ch) {
    const S* plane = x.data() + ch * h * w;
    S* o = out.data() + ch * new_h * new_w;
    for (Index y = 0; y < new_h; ++y) {
      const double fy = y * sy;
      const Index y0 = Index(fy);
      const Index y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - double(y0);
      for (Index xx = 0; xx < new_w; ++xx) {
        const double fx = xx * sx;
        const Index x0 = Index(fx);
        const Index x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - double(x0);
        const double v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
        const double v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
        o[y * new_w + xx] =
            S((1 - wy) * ((1 - wx) * v00 + wx * v01) +
              wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

// With probability p, shrink the image to a random size of at least
// (1 - max_fraction) of the original and paste it at a random offset on a
// zero canvas of the original size; otherwise return the input unchanged.
template <typename S>
TensorT<S> dim_resize_pad(const TensorT<S>& x, double probability,
                          double max_fraction, Rng& rng) {
  x.require_rank(3, "dim_resize_pad input");
  if (probability < 0.0 || probability > 1.0)
    throw ConfigError("dim_resize_pad: probability must be in [0,1]");
  if (max_fraction < 0.0 || max_fraction >= 1.0)
    throw ConfigError("dim_resize_pad: max_fraction must be in [0,1)");
  if (!rng.bernoulli(probability)) return x;
  const Index h = x.dim(1), w = x.dim(2);
  const double frac = rng.uniform(1.0 - max_fraction, 1.0);
  const Index new_h = std::max<Index>(1, Index(std::lround(frac * double(h))));
  const Index new_w = std::max<Index>(1, Index(std::lround(frac * double(w))));
  TensorT<S> small = bilinear_resize(x, new_h, new_w);
  const Index top = Index(rng.below(uint64_t(h - new_h + 1)));
  const Index left = Index(rng.below(uint64_t(w - new_w + 1)));
  TensorT<S> out(x.shape());
  for (Index c = 0; c < x.dim(0); ++c)
    for (Index y = 0; y < new_h; ++y)
      for (Index xx = 0; xx < new_w; ++xx)
        out[(c * h + top + y) * w + left + xx] =
            small[(c * new_h + y) * new_w + xx];
  return out;
}

// Normalized Gaussian kernel (sum == 1), shape (k, k).
template <typename S>
TensorT<S> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0)
    throw ConfigError("gaussian_kernel: size must be odd and >= 1");
  if (sigma <= 0.0) sigma = double(size) / 3.0;
  TensorT<S> k({Index(size), Index(size)});
  const int half = size / 2;
  double sum = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - half, dx = x - half;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k[Index(y * size + x)] = S(v);
      sum += v;
    }
  for (Index i = 0; i < k.numel(); ++i) k[i] = S(double(k[i]) / sum);
  return k;
}

// Depthwise convolution of a gradient field with a normalized Gaussian
// kernel, zero padding, shape preserved.
template <typename S>
TensorT<S> tim_smooth(const TensorT<S>& grad, int kernel_size, double sigma) {
  grad.require_rank(3, "tim_smooth input");
  const TensorT<S> k = gaussian_kernel<S>(kernel_size, sigma);
  const Index c = grad.dim(0), h = grad.dim(1), w = grad.dim(2);
  const int half = kernel_size / 2;
  TensorT<S> out(grad.shape());
  for (Index ch = 0; ch < c; ++ch) {
    const S* in = grad.data() + ch * h * w;
    S* o = out.data() + ch * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -half; dy <= half; ++dy) {
          const Index yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = -half; dx <= half; ++dx) {
            const Index xx = x + dx;
            if (xx < 0 || xx >= w) continue;
            acc += double(in[yy * w + xx]) *
                   double(k[Index((dy + half) * kernel_size + (dx + half))]);
          }
        }
        o[y * w + x] = S(acc);
      }
  }
  return out;
}

}  // namespace tg
