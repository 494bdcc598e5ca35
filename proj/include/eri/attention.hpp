#pragma once

#include <string>
#include <vector>

#include "eri/layers.hpp"

namespace eri {

/// One cross-attention unit: a spatial map in (0,1)^{h x w} and channel gates
/// in (0,1)^C both multiply the feature map, which is then average-pooled.
template <typename T>
struct CrossAttentionHead {
  // spatial path: 1x1 conv -> relu -> 3x3 conv (pad 1) -> sigmoid
  Conv2d<T> spatial_reduce;
  Conv2d<T> spatial_map;
  // channel path: GAP -> linear -> relu -> linear -> sigmoid
  Linear<T> channel_reduce;
  Linear<T> channel_expand;

  CrossAttentionHead() = default;
  CrossAttentionHead(Index channels, Index reduction, Rng& rng) {
    if (reduction < 1 || channels % reduction != 0)
      throw ConfigInvalid("attention reduction " + std::to_string(reduction) + " must divide " + std::to_string(channels));
    const Index inner = channels / reduction;
    spatial_reduce = Conv2d<T>(channels, inner, 1, 1, 0, true, rng);
    spatial_map = Conv2d<T>(inner, 1, 3, 1, 1, true, rng);
    channel_reduce = Linear<T>(channels, inner, rng);
    channel_expand = Linear<T>(inner, channels, rng);
  }

  Index channels() const { return channel_expand.out_features(); }

  /// [N,1,h,w]
  Tensor<T> spatial(const Tensor<T>& fmap) const {
    return sigmoid(spatial_map.forward(relu(spatial_reduce.forward(fmap))));
  }

  /// [N,C]
  Tensor<T> channel(const Tensor<T>& fmap) const {
    Tensor<T> pooled = mean(fmap, {2, 3});
    return sigmoid(channel_expand.forward(relu(channel_reduce.forward(pooled))));
  }

  Tensor<T> forward(const Tensor<T>& fmap) const {
    if (fmap.rank() != 4 || fmap.dim(1) != channels())
      throw ShapeMismatch("attention head expects [N," + std::to_string(channels()) + ",h,w], got " +
                          to_string(fmap.shape()));
    const Index n = fmap.dim(0), c = fmap.dim(1);
    Tensor<T> gates = reshape(channel(fmap), {n, c, 1, 1});
    return mean(fmap * spatial(fmap) * gates, {2, 3});
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    spatial_reduce.collect(out, prefix + ".spatial_reduce");
    spatial_map.collect(out, prefix + ".spatial_map");
    channel_reduce.collect(out, prefix + ".channel_reduce");
    channel_expand.collect(out, prefix + ".channel_expand");
  }
};

template <typename T>
Tensor<T> attention_head_forward(const CrossAttentionHead<T>& head, const Tensor<T>& fmap) {
  return head.forward(fmap);
}

/// H independent heads whose outputs are summed in index order.
template <typename T>
struct AttentionBlock {
  std::vector<CrossAttentionHead<T>> heads;

  AttentionBlock() = default;
  AttentionBlock(Index channels, Index num_heads, Index reduction, Rng& rng) {
    if (num_heads < 1) throw ConfigInvalid("attention block needs at least one head");
    for (Index h = 0; h < num_heads; ++h) heads.emplace_back(channels, reduction, rng);
  }

  Index output_dim() const { return heads.front().channels(); }

  Tensor<T> forward(const Tensor<T>& fmap) const {
    Tensor<T> total = heads.front().forward(fmap);
    for (std::size_t h = 1; h < heads.size(); ++h) total = total + heads[h].forward(fmap);
    return total;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t h = 0; h < heads.size(); ++h) heads[h].collect(out, prefix + ".head" + std::to_string(h));
  }
};

template <typename T>
Tensor<T> attention_block_forward(const AttentionBlock<T>& block, const Tensor<T>& fmap) {
  return block.forward(fmap);
}

}  // namespace eri
