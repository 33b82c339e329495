#include <doctest.h>

#include <cmath>
#include <cstring>

#include "transfergrad/rng.hpp"
#include "transfergrad/transforms.hpp"

using namespace tg;

namespace {

Tensor random_image(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform());
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("transforms");

TEST_CASE("sim scale halves per index") {
  const Tensor x = Tensor::full({1, 2, 2}, 0.8f);
  CHECK(sim_scale(x, 0)[0] == 0.8f);
  CHECK(sim_scale(x, 1)[0] == doctest::Approx(0.4f));
  const Tensor ones = Tensor::full({1, 2, 2}, 1.0f);
  // deep scaling drives the copy towards black
  CHECK(sim_scale(ones, 10).array().maxCoeff() <= 0.0009765625f + 1e-12f);
  CHECK(sim_scale(ones, 10).array().maxCoeff() > 0.0f);
}

TEST_CASE("bounded scale interpolates from H towards L") {
  const Tensor x = Tensor::full({1, 1, 1}, 1.0f);
  CHECK(bounded_scale(x, 0, 0.0, 1.0)[0] == 1.0f);          // i=0 -> H
  CHECK(bounded_scale(x, 0, 0.1, 0.9)[0] == doctest::Approx(0.9f));
  CHECK(bounded_scale(x, 30, 0.1, 0.9)[0] == doctest::Approx(0.1f).epsilon(1e-6));
  CHECK_THROWS_AS(bounded_scale_factor(0, 0.5, 0.4), ConfigError);
  CHECK_THROWS_AS(bounded_scale_factor(-1, 0.0, 1.0), ConfigError);
}

TEST_CASE("bounded scale with L=0,H=1 reduces to sim scale bitwise") {
  Rng rng(31337);
  const Tensor x = random_image({1, 4, 4}, rng);
  for (int i = 0; i <= 20; ++i) {
    const Tensor a = sim_scale(x, i);
    const Tensor b = bounded_scale(x, i, 0.0, 1.0);
    CHECK(std::memcmp(a.data(), b.data(), size_t(a.numel()) * sizeof(float)) ==
          0);
  }
}

TEST_CASE("uniform scale factors form the exact closed-form grid") {
  const double want[5] = {0.1, 0.2625, 0.425, 0.5875, 0.75};
  for (int i = 0; i < 5; ++i)
    CHECK(uniform_scale_factor(i, 5, 0.1, 0.75) == want[i]);
  // single copy degenerates to the upper bound
  CHECK(uniform_scale_factor(0, 1, 0.1, 0.75) == 0.75);
  // two copies hit both endpoints
  CHECK(uniform_scale_factor(0, 2, 0.3, 0.6) == 0.3);
  CHECK(uniform_scale_factor(1, 2, 0.3, 0.6) == 0.6);
  CHECK_THROWS_AS(uniform_scale_factor(5, 5, 0.1, 0.75), ConfigError);
  CHECK_THROWS_AS(uniform_scale_factor(-1, 5, 0.1, 0.75), ConfigError);
}

TEST_CASE("uniform scale factors are an arithmetic progression") {
  const int grids[][1] = {{3}, {5}, {7}, {12}};
  for (const auto& g : grids) {
    const int m = g[0];
    const double step = (0.75 - 0.1) / double(m - 1);
    for (int i = 0; i + 1 < m; ++i) {
      const double d = uniform_scale_factor(i + 1, m, 0.1, 0.75) -
                       uniform_scale_factor(i, m, 0.1, 0.75);
      CHECK(std::abs(d - step) <=
            std::ldexp(1.0, -50));  // within one ulp of the step
    }
  }
}

TEST_CASE("mix mask keeps every element inside [1-r, 1+r]") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const double r = rng.uniform();
    const Tensor mix = random_image({1, 5, 5}, rng);
    const Tensor mask = make_mix_mask(mix, r);
    CHECK(mask.array().minCoeff() >= float(1.0 - r) - 1e-6f);
    CHECK(mask.array().maxCoeff() <= float(1.0 + r) + 1e-6f);
  }
}

TEST_CASE("mix mask anchor values") {
  Tensor mix({1, 1, 3});
  mix[0] = 1.0f;
  mix[1] = 0.0f;
  mix[2] = 0.5f;
  const Tensor mask = make_mix_mask(mix, 0.5);
  CHECK(mask[0] == doctest::Approx(1.5f));
  CHECK(mask[1] == doctest::Approx(0.5f));
  CHECK(mask[2] == doctest::Approx(1.0f));  // midpoint is neutral
  // r = 0 collapses to the all-ones mask
  const Tensor identity = make_mix_mask(mix, 0.0);
  for (Index i = 0; i < identity.numel(); ++i) CHECK(identity[i] == 1.0f);
}

TEST_CASE("mix mask is affine and monotone in the mix image") {
  const double r = 0.3;
  Tensor lo({1});
  lo[0] = 0.2f;
  Tensor hi({1});
  hi[0] = 0.9f;
  CHECK(make_mix_mask(lo, r)[0] < make_mix_mask(hi, r)[0]);
  // both directions reachable when the mix image straddles 0.5
  Tensor straddle({2});
  straddle[0] = 0.1f;
  straddle[1 ] = 0.9f;
  const Tensor mask = make_mix_mask(straddle, r);
  CHECK(mask[0] < 1.0f);
  CHECK(mask[1] > 1.0f);
}

TEST_CASE("apply_mix_mask multiplies and clips") {
  Tensor x({3});
  x[0] = 0.8f;
  x[1] = 0.4f;
  x[2] = 0.6f;
  Tensor mask({3});
  mask[0] = 1.5f;
  mask[1] = 0.5f;
  mask[2] = 1.0f;
  const Tensor y = apply_mix_mask(x, mask);
  CHECK(y[0] == 1.0f);  // 1.2 clipped
  CHECK(y[1] == doctest::Approx(0.2f));
  CHECK(y[2] == doctest::Approx(0.6f));
  CHECK_THROWS_AS(apply_mix_mask(x, Tensor({2})), ShapeError);

  // identity mask is the identity on [0,1] images
  Rng rng(8);
  const Tensor img = random_image({1, 4, 4}, rng);
  const Tensor out = apply_mix_mask(img, make_mix_mask(Tensor({1, 4, 4}), 0.0));
  CHECK(std::memcmp(img.data(), out.data(),
                    size_t(img.numel()) * sizeof(float)) == 0);
}

TEST_CASE("admix adds the scaled mix image") {
  const Tensor x = Tensor::full({2}, 0.5f);
  const Tensor other = Tensor::full({2}, 1.0f);
  CHECK(admix_mix(x, other, 0.0)[0] == 0.5f);
  CHECK(admix_mix(x, other, 0.2)[0] == doctest::Approx(0.7f));
  const Tensor self = admix_mix(x, x, 0.2);
  CHECK(self[0] == doctest::Approx(0.6f));  // 1.2 * x
  CHECK_THROWS_AS(admix_mix(x, Tensor({3}), 0.2), ShapeError);
  CHECK_THROWS_AS(admix_mix(x, other, 1.0), ConfigError);
}

TEST_CASE("clip_unit and clip_ball compose") {
  Tensor x({3});
  x[0] = 0.5f;
  x[1] = 0.9f;
  x[2] = -0.2f;
  Tensor anchor({3});
  anchor[0] = 0.5f;
  anchor[1] = 0.5f;
  anchor[2] = 0.0f;
  const float eps = 0.1f;
  const Tensor inside = clip_ball(anchor, anchor, eps);
  for (Index i = 0; i < 3; ++i) CHECK(inside[i] == anchor[i]);

  const Tensor balled = clip_ball(x, anchor, eps);
  CHECK(balled[1] == doctest::Approx(0.6f));  // pulled to anchor + eps
  const Tensor both = clip_unit(clip_ball(x, anchor, eps));
  CHECK(both[2] == 0.0f);
  for (Index i = 0; i < 3; ++i) {
    CHECK(both[i] >= 0.0f);
    CHECK(both[i] <= 1.0f);
    CHECK(std::abs(both[i] - anchor[i]) <= eps + 1e-7f);
  }
}

TEST_CASE("dim resize-pad respects probability and shape") {
  Rng zero_rng(1);
  const Tensor x = Tensor::full({1, 8, 8}, 0.7f);
  const Tensor same = dim_resize_pad(x, 0.0, 0.1, zero_rng);
  CHECK(std::memcmp(x.data(), same.data(),
                    size_t(x.numel()) * sizeof(float)) == 0);

  Rng rng(2);
  const Tensor t = dim_resize_pad(x, 1.0, 0.25, rng);
  CHECK(t.shape() == x.shape());
  Rng rng_again(2);
  const Tensor t2 = dim_resize_pad(x, 1.0, 0.25, rng_again);
  CHECK(std::memcmp(t.data(), t2.data(), size_t(t.numel()) * sizeof(float)) ==
        0);
}

TEST_CASE("dim resize-pad only removes pixel mass") {
  Rng rng(77);
  const Tensor x = random_image({1, 10, 10}, rng);
  const float mean_x = x.array().mean();
  for (int draw = 0; draw < 100; ++draw) {
    Rng local = rng.stream(uint64_t(draw));
    const Tensor y = dim_resize_pad(x, 1.0, 0.3, local);
    CHECK(y.array().mean() <= mean_x + 1e-5f);
  }
}

TEST_CASE("gaussian smoothing preserves constants and mass") {
  // kernel size 1 is the identity
  Rng rng(5);
  const Tensor g = random_image({2, 6, 6}, rng);
  const Tensor same = tim_smooth(g, 1, 0.0);
  CHECK(std::memcmp(g.data(), same.data(),
                    size_t(g.numel()) * sizeof(float)) == 0);

  // constant field unchanged in the interior (kernel sums to 1)
  const Tensor flat = Tensor::full({1, 11, 11}, 0.25f);
  const Tensor smooth = tim_smooth(flat, 3, 1.0);
  for (Index y = 1; y < 10; ++y)
    for (Index x = 1; x < 10; ++x)
      CHECK(smooth[y * 11 + x] == doctest::Approx(0.25f).epsilon(1e-5));

  // centred impulse keeps its mass inside a wide interior window
  Tensor impulse({1, 11, 11});
  impulse[5 * 11 + 5] = 1.0f;
  const Tensor spread = tim_smooth(impulse, 7, 7.0 / 3.0);
  double mass = 0.0;
  for (Index i = 0; i < spread.numel(); ++i) mass += double(spread[i]);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-5));

  CHECK_THROWS_AS(tim_smooth(flat, 4, 1.0), ConfigError);
}

TEST_CASE("transforms are pure under a fixed seed") {
  Rng rng(123);
  const Tensor x = random_image({1, 6, 6}, rng);
  const Tensor a = uniform_scale(x, 2, 5, 0.1, 0.75);
  const Tensor b = uniform_scale(x, 2, 5, 0.1, 0.75);
  CHECK(std::memcmp(a.data(), b.data(), size_t(a.numel()) * sizeof(float)) ==
        0);
}

TEST_SUITE_END();
