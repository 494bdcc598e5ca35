#include <gtest/gtest.h>

#include <algorithm>

#include "eri/attention.hpp"
#include "test_util.hpp"

using namespace eri;
using test::random_tensor;

namespace {

void randomize_biases(CrossAttentionHead<double>& head, Rng& rng) {
  head.spatial_reduce.bias = random_tensor(head.spatial_reduce.bias.shape(), rng);
  head.spatial_map.bias = random_tensor(head.spatial_map.bias.shape(), rng);
  head.channel_reduce.bias = random_tensor(head.channel_reduce.bias.shape(), rng);
  head.channel_expand.bias = random_tensor(head.channel_expand.bias.shape(), rng);
}

}  // namespace

TEST(Attention, HeadMatchesLoopOracle) {
  Rng rng(1);
  const Index N = 2, C = 4, h = 3, w = 3, r = 2, I = C / r;
  CrossAttentionHead<double> head(C, r, rng);
  randomize_biases(head, rng);
  auto f = random_tensor({N, C, h, w}, rng);
  auto out = head.forward(f);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto at = [&](Index n, Index c, Index y, Index x) { return f[((n * C + c) * h + y) * w + x]; };
  for (Index n = 0; n < N; ++n) {
    // spatial path
    std::vector<double> red(static_cast<std::size_t>(I * h * w));
    for (Index i = 0; i < I; ++i)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          double s = head.spatial_reduce.bias[i];
          for (Index c = 0; c < C; ++c) s += head.spatial_reduce.weight[i * C + c] * at(n, c, y, x);
          red[static_cast<std::size_t>((i * h + y) * w + x)] = std::max(s, 0.0);
        }
    std::vector<double> smap(static_cast<std::size_t>(h * w));
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double s = head.spatial_map.bias[0];
        for (Index i = 0; i < I; ++i)
          for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
              Index yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += head.spatial_map.weight[(i * 3 + ky) * 3 + kx] * red[static_cast<std::size_t>((i * h + yy) * w + xx)];
            }
        smap[static_cast<std::size_t>(y * w + x)] = sig(s);
      }
    // channel path
    std::vector<double> gap(static_cast<std::size_t>(C), 0.0), hidden(static_cast<std::size_t>(I));
    for (Index c = 0; c < C; ++c) {
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) gap[static_cast<std::size_t>(c)] += at(n, c, y, x) / static_cast<double>(h * w);
    }
    for (Index i = 0; i < I; ++i) {
      double s = head.channel_reduce.bias[i];
      for (Index c = 0; c < C; ++c) s += head.channel_reduce.weight[i * C + c] * gap[static_cast<std::size_t>(c)];
      hidden[static_cast<std::size_t>(i)] = std::max(s, 0.0);
    }
    for (Index c = 0; c < C; ++c) {
      double s = head.channel_expand.bias[c];
      for (Index i = 0; i < I; ++i) s += head.channel_expand.weight[c * I + i] * hidden[static_cast<std::size_t>(i)];
      const double gate = sig(s);
      double v = 0;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) v += at(n, c, y, x) * smap[static_cast<std::size_t>(y * w + x)] * gate;
      EXPECT_NEAR(out[n * C + c], v / static_cast<double>(h * w), 1e-12);
    }
  }
}

TEST(Attention, GatesStrictlyInsideUnitInterval) {
  Rng rng(2);
  CrossAttentionHead<double> head(8, 4, rng);
  auto f = random_tensor({3, 8, 4, 4}, rng, -5, 5);
  auto s = head.spatial(f);
  auto g = head.channel(f);
  EXPECT_GT(s.data().minCoeff(), 0.0);
  EXPECT_LT(s.data().maxCoeff(), 1.0);
  EXPECT_GT(g.data().minCoeff(), 0.0);
  EXPECT_LT(g.data().maxCoeff(), 1.0);
}

TEST(Attention, SaturatedGatesReduceToAveragePooling) {
  Rng rng(3);
  CrossAttentionHead<double> head(8, 4, rng);
  head.spatial_map.weight = Tensor<double>::zeros(head.spatial_map.weight.shape());
  head.spatial_map.bias = Tensor<double>::full({1}, 40.0);
  head.channel_expand.weight = Tensor<double>::zeros(head.channel_expand.weight.shape());
  head.channel_expand.bias = Tensor<double>::full({8}, 40.0);
  auto f = random_tensor({2, 8, 3, 3}, rng);
  auto out = head.forward(f);
  auto gap = mean(f, {2, 3});
  for (Index i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], gap[i], 1e-12);
}

TEST(Attention, ZeroInputGivesZeroOutput) {
  Rng rng(4);
  AttentionBlock<double> block(8, 3, 2, rng);
  for (auto& head : block.heads) randomize_biases(head, rng);
  auto out = block.forward(Tensor<double>::zeros({2, 8, 4, 4}));
  EXPECT_EQ(out.shape(), (Shape{2, 8}));
  EXPECT_EQ(out.data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Attention, BlockSumsHeads) {
  Rng rng(5);
  AttentionBlock<double> single(8, 1, 4, rng);
  auto f = random_tensor({2, 8, 3, 3}, rng);
  EXPECT_EQ(single.forward(f).data(), single.heads[0].forward(f).data());

  AttentionBlock<double> twin;
  twin.heads = {single.heads[0], single.heads[0]};
  EXPECT_EQ(twin.forward(f).data(), (single.heads[0].forward(f) * 2.0).data());
}

TEST(Attention, HeadOrderPermutationInvariant) {
  Rng rng(6);
  AttentionBlock<double> block(8, 4, 2, rng);
  auto f = random_tensor({2, 8, 3, 3}, rng);
  auto base = block.forward(f);
  AttentionBlock<double> permuted = block;
  std::reverse(permuted.heads.begin(), permuted.heads.end());
  auto other = permuted.forward(f);
  for (Index i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], other[i], 1e-12);
}

TEST(Attention, ShapeLawOverRandomConfigs) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Index r = rng.uniform_int(1, 4);
    const Index C = r * rng.uniform_int(1, 4);
    AttentionBlock<float> block(C, rng.uniform_int(1, 3), r, rng);
    const Index n = rng.uniform_int(1, 3);
    auto out = block.forward(random_tensor<float>({n, C, rng.uniform_int(1, 5), rng.uniform_int(1, 5)}, rng));
    EXPECT_EQ(out.shape(), (Shape{n, C}));
  }
}

TEST(Attention, RejectsBadConfiguration) {
  Rng rng(8);
  EXPECT_THROW(CrossAttentionHead<float>(6, 4, rng), ConfigInvalid);
  EXPECT_THROW(AttentionBlock<float>(8, 0, 2, rng), ConfigInvalid);
  CrossAttentionHead<float> head(8, 2, rng);
  EXPECT_THROW(head.forward(Tensor<float>::zeros({1, 4, 2, 2})), ShapeMismatch);
}
