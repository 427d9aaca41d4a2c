#include <gtest/gtest.h>

#include <random>

#include "atv/features.hpp"
#include "atv/verify.hpp"
#include "test_util.hpp"

using namespace atv;
using namespace atv::features;

namespace {

AttentionBlockParams random_block(std::mt19937_64& rng, int d_in, int d_out, int k, bool zero_rel = false) {
  AttentionBlockParams p;
  p.window = k;
  p.wq = parameter(verify::random_tensor(rng, {d_out, d_in}));
  p.wk = parameter(verify::random_tensor(rng, {d_out, d_in}));
  p.wv = parameter(verify::random_tensor(rng, {d_out, d_in}));
  p.rel = parameter(zero_rel ? Tensor({2 * k - 1, 2 * k - 1, d_out})
                             : verify::random_tensor(rng, {2 * k - 1, 2 * k - 1, d_out}));
  return p;
}

// W_v x at every pixel.
Tensor value_projection(const Tensor& x, const Tensor& wv) {
  const int din = x.dim(0), H = x.dim(1), W = x.dim(2), dout = wv.dim(0);
  Tensor y({dout, H, W});
  for (int o = 0; o < dout; ++o)
    for (int c = 0; c < din; ++c)
      for (int p = 0; p < H * W; ++p) y[o * H * W + p] += wv[o * din + c] * x[c * H * W + p];
  return y;
}

}  // namespace

TEST(LocalSelfAttention, SingletonWindow) {
  std::mt19937_64 rng(1);
  const auto p = random_block(rng, 3, 4, 1);
  const Tensor x = verify::random_tensor(rng, {3, 1, 1});
  const Tensor y = local_self_attention(x, p);
  EXPECT_LT(test::max_abs_diff(y, value_projection(x, p.wv.value())), 1e-15);
}

TEST(LocalSelfAttention, ConstantInputGivesValueProjection) {
  std::mt19937_64 rng(2);
  const auto p = random_block(rng, 3, 5, 3, true);
  Tensor x({3, 6, 7});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 42; ++i) x[c * 42 + i] = 0.3 * c - 0.7;
  const Tensor y = local_self_attention(x, p);
  EXPECT_LT(test::max_abs_diff(y, value_projection(x, p.wv.value())), 1e-12);
  for (double w : attention_weights(x, p, 3, 3)) EXPECT_NEAR(w, 1.0 / 9.0, 1e-15);
}

TEST(LocalSelfAttention, MatchesOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(100 + trial);
    const int k = 3 + 2 * (trial % 2);
    const auto p = random_block(rng, 3, 4, k);
    const Tensor x = verify::random_tensor(rng, {3, 6, 5});
    const Tensor ref = verify::attention_oracle(x, p.wq.value(), p.wk.value(), p.wv.value(), p.rel.value(), k);
    EXPECT_LT(test::max_abs_diff(local_self_attention(x, p), ref), 1e-12);
  }
}

TEST(LocalSelfAttention, WeightsAreAMaskedDistribution) {
  std::mt19937_64 rng(3);
  const auto p = random_block(rng, 2, 3, 3);
  const Tensor x = verify::random_tensor(rng, {2, 4, 5});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      const auto w = attention_weights(x, p, i, j);
      double s = 0.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const double v = w[a * 3 + b];
          EXPECT_GE(v, 0.0);
          const int r = i + a - 1, c = j + b - 1;
          if (r < 0 || r >= 4 || c < 0 || c >= 5) EXPECT_EQ(v, 0.0);
          s += v;
        }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(LocalSelfAttention, InteriorTranslationEquivariance) {
  std::mt19937_64 rng(4);
  const auto p = random_block(rng, 3, 3, 3);
  const int H = 9, W = 12, shift = 2;
  const Tensor x = verify::random_tensor(rng, {3, H, W});
  Tensor xs({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) xs.at(c, i, j) = x.at(c, i, (j - shift + W) % W);
  const Tensor y = local_self_attention(x, p), ys = local_self_attention(xs, p);
  for (int c = 0; c < 3; ++c)
    for (int i = 1; i < H - 1; ++i)
      for (int j = 1; j < W - 1 - shift; ++j) EXPECT_NEAR(ys.at(c, i, j + shift), y.at(c, i, j), 1e-12);
}

TEST(LocalSelfAttention, ValidateRejectsBadShapes) {
  std::mt19937_64 rng(5);
  auto p = random_block(rng, 3, 4, 3);
  EXPECT_NO_THROW(p.validate());
  p.rel = parameter(Tensor({3, 3, 4}));
  EXPECT_THROW(p.validate(), std::exception);
}

TEST(FeatureExtractor, ShapesAndDeterminism) {
  nn::ParamStore store;
  std::mt19937_64 rng(6);
  FeatureExtractor fx(store, "fx", {}, rng);
  std::mt19937_64 img_rng(7);
  const Tensor img = verify::random_tensor(img_rng, {3, 64, 64}, 0.0, 1.0);
  const auto a = fx.extract(img);
  const auto b = fx.extract(img);
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(a.maps[s].shape(), (Shape{32, 64 >> s, 64 >> s}));
    EXPECT_TRUE(test::bitwise_equal(a.maps[s], b.maps[s]));
  }
  EXPECT_EQ(fx.config().channels % 8, 0);
}

// A circular shift by the coarsest stride (4 pixels) moves the finest map by
// the same amount away from the wrap-around seam.
TEST(FeatureExtractor, InteriorTranslationEquivariance) {
  nn::ParamStore store;
  std::mt19937_64 rng(8);
  FeatureExtractor fx(store, "fx", {}, rng);
  const int H = 32, W = 64, shift = 4, margin = 20;
  const Tensor img = test::smooth_map(3, H, W, 0.4);
  Tensor shifted({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) shifted.at(c, i, j) = img.at(c, i, (j - shift + W) % W);
  const Tensor f = fx.extract(img).maps[0], fs = fx.extract(shifted).maps[0];
  double worst = 0.0;
  for (int c = 0; c < 32; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = margin; j < W - margin - shift; ++j)
        worst = std::max(worst, std::abs(fs.at(c, i, j + shift) - f.at(c, i, j)));
  EXPECT_LT(worst, 1e-4);
}

TEST(FeatureExtractor, RejectsIndivisibleSize) {
  nn::ParamStore store;
  std::mt19937_64 rng(9);
  FeatureExtractor fx(store, "fx", {}, rng);
  EXPECT_THROW(fx.extract(Tensor({3, 30, 30})), std::exception);
}
