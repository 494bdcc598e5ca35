#pragma once

#include <array>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "eri/ops.hpp"
#include "eri/random.hpp"

namespace eri {

/// A parameter or persistent buffer with its stable checkpoint name.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool buffer = false;  // running statistics: saved, never optimized
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

/// Sets requires_grad on every non-buffer entry.
template <typename T>
void set_trainable(ParamList<T>& params, bool trainable) {
  for (auto& p : params)
    if (!p.buffer) p.tensor.set_requires_grad(trainable);
}

namespace init {

template <typename T>
Tensor<T> uniform(Shape shape, double limit, Rng& rng) {
  Vec<T> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  Vec<T> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace init

// ---------------------------------------------------------------------------

/// Fully connected layer: y = x W^T + b.
template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(Index in, Index out, Rng& rng)
      : weight(init::uniform<T>({out, in}, std::sqrt(6.0 / static_cast<double>(in + out)), rng)),
        bias(Tensor<T>::zeros({out}, true)) {}

  Index in_features() const { return weight.dim(1); }
  Index out_features() const { return weight.dim(0); }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_features())
      throw ShapeMismatch("linear expects [B," + std::to_string(in_features()) + "], got " + to_string(x.shape()));
    return matmul(x, transpose(weight)) + bias;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
Tensor<T> linear_forward(const Linear<T>& layer, const Tensor<T>& x) {
  return layer.forward(x);
}

/// 2-D convolution with optional per-filter bias.
template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [F, C, k, k]
  Tensor<T> bias;    // [F], used when has_bias
  Index stride = 1;
  Index padding = 0;
  bool has_bias = false;

  Conv2d() = default;
  Conv2d(Index in, Index out, Index kernel, Index stride_, Index padding_, bool with_bias, Rng& rng)
      : weight(init::normal<T>({out, in, kernel, kernel}, std::sqrt(2.0 / static_cast<double>(in * kernel * kernel)), rng)),
        stride(stride_),
        padding(padding_),
        has_bias(with_bias) {
    if (has_bias) bias = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = conv2d(x, weight, stride, padding);
    if (has_bias) y = y + reshape(bias, {bias.size(), 1, 1});
    return y;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (has_bias) out.push_back({prefix + ".bias", bias});
  }
};

/// Batch normalization over N, H, W per channel. Training mode uses the
/// population batch variance (divide by N*H*W) and folds batch statistics into
/// the running buffers with `momentum`.
template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  bool training = false;

  BatchNorm2d() = default;
  explicit BatchNorm2d(Index channels)
      : gamma(Tensor<T>::ones({channels}, true)),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::ones({channels})) {}

  Index channels() const { return gamma.size(); }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != channels())
      throw ShapeMismatch("batchnorm expects [N," + std::to_string(channels()) + ",H,W], got " + to_string(x.shape()));
    const Index c = channels();
    Tensor<T> g = reshape(gamma, {c, 1, 1});
    Tensor<T> b = reshape(beta, {c, 1, 1});
    if (!training) {
      Tensor<T> mu = reshape(running_mean, {c, 1, 1});
      Vec<T> inv = (running_var.data().array() + eps).sqrt().inverse();
      Tensor<T> scale({c, 1, 1}, inv);
      return (x - mu) * scale * g + b;
    }
    const Index count = x.dim(0) * x.dim(2) * x.dim(3);
    if (count < 2) throw BatchTooSmall("batchnorm in training mode needs N*H*W >= 2, got " + std::to_string(count));
    Tensor<T> mu = mean(x, {0, 2, 3}, true);
    Tensor<T> centered = x - mu;
    Tensor<T> var = mean(square(centered), {0, 2, 3}, true);
    Tensor<T> y = centered / sqrt(var + eps) * g + b;

    running_mean.mutable_data() = (T(1) - momentum) * running_mean.data() + momentum * mu.data();
    running_var.mutable_data() = (T(1) - momentum) * running_var.data() + momentum * var.data();
    return y;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
    out.push_back({prefix + ".running_mean", running_mean, true});
    out.push_back({prefix + ".running_var", running_var, true});
  }
};

template <typename T>
Tensor<T> batchnorm_forward(BatchNorm2d<T>& bn, const Tensor<T>& x) {
  return bn.forward(x);
}

/// Basic residual block: two 3x3 conv+BN pairs, with a 1x1 conv+BN projection
/// on the skip path whenever stride or channel count changes.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, proj;
  BatchNorm2d<T> bn1, bn2, proj_bn;
  bool has_proj = false;

  ResidualBlock() = default;
  ResidualBlock(Index in, Index out, Index stride, Rng& rng)
      : conv1(in, out, 3, stride, 1, false, rng),
        conv2(out, out, 3, 1, 1, false, rng),
        bn1(out),
        bn2(out),
        has_proj(stride != 1 || in != out) {
    if (has_proj) {
      proj = Conv2d<T>(in, out, 1, stride, 0, false, rng);
      proj_bn = BatchNorm2d<T>(out);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> main = relu(bn1.forward(conv1.forward(x)));
    main = bn2.forward(conv2.forward(main));
    Tensor<T> skip = has_proj ? proj_bn.forward(proj.forward(x)) : x;
    if (skip.shape() != main.shape())
      throw ShapeMismatch("residual paths disagree: " + to_string(skip.shape()) + " vs " + to_string(main.shape()));
    return relu(main + skip);
  }

  void set_training(bool flag) {
    bn1.training = bn2.training = proj_bn.training = flag;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    bn1.collect(out, prefix + ".bn1");
    conv2.collect(out, prefix + ".conv2");
    bn2.collect(out, prefix + ".bn2");
    if (has_proj) {
      proj.collect(out, prefix + ".proj");
      proj_bn.collect(out, prefix + ".proj_bn");
    }
  }
};

/// Four-stage ResNet-style feature extractor. The default is a desk-scale
/// miniature of ResNet-18: 3x32x32 input, one block per stage.
struct BackboneConfig {
  std::array<Index, 4> stage_channels{16, 32, 64, 64};
  std::array<Index, 4> blocks_per_stage{1, 1, 1, 1};
  std::array<Index, 4> strides{1, 2, 2, 2};
  Index input_channels = 3;
  Index input_height = 32;
  Index input_width = 32;

  Index feature_dim() const { return stage_channels[3]; }

  void validate() const {
    auto positive = [](Index v) { return v >= 1; };
    bool ok = positive(input_channels) && positive(input_height) && positive(input_width);
    for (int s = 0; s < 4; ++s) ok = ok && positive(stage_channels[s]) && positive(blocks_per_stage[s]) && positive(strides[s]);
    if (!ok) throw ConfigInvalid("backbone extents must all be >= 1");
  }

  /// (C_f, h, w) of the feature map.
  std::array<Index, 3> feature_shape() const {
    Index h = input_height, w = input_width;
    for (int s = 0; s < 4; ++s) {
      h = (h + 2 - 3) / strides[s] + 1;
      w = (w + 2 - 3) / strides[s] + 1;
    }
    return {stage_channels[3], h, w};
  }

  bool operator==(const BackboneConfig&) const = default;
};

template <typename T>
struct Backbone {
  BackboneConfig config;
  Conv2d<T> stem;
  BatchNorm2d<T> stem_bn;
  std::vector<ResidualBlock<T>> blocks;

  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng) : config(cfg) {
    cfg.validate();
    stem = Conv2d<T>(cfg.input_channels, cfg.stage_channels[0], 3, 1, 1, false, rng);
    stem_bn = BatchNorm2d<T>(cfg.stage_channels[0]);
    Index in = cfg.stage_channels[0];
    for (int s = 0; s < 4; ++s) {
      for (Index b = 0; b < cfg.blocks_per_stage[s]; ++b) {
        blocks.emplace_back(in, cfg.stage_channels[s], b == 0 ? cfg.strides[s] : 1, rng);
        in = cfg.stage_channels[s];
      }
    }
  }

  /// frames [N,C,H,W] -> spatial feature map [N,C_f,h,w] (not pooled).
  Tensor<T> forward(const Tensor<T>& frames) {
    if (frames.rank() != 4 || frames.dim(1) != config.input_channels || frames.dim(2) != config.input_height ||
        frames.dim(3) != config.input_width) {
      throw ShapeMismatch("backbone expects [N," + std::to_string(config.input_channels) + "," +
                          std::to_string(config.input_height) + "," + std::to_string(config.input_width) + "], got " +
                          to_string(frames.shape()));
    }
    Tensor<T> x = relu(stem_bn.forward(stem.forward(frames)));
    for (auto& block : blocks) x = block.forward(x);
    return x;
  }

  void set_training(bool flag) {
    stem_bn.training = flag;
    for (auto& b : blocks) b.set_training(flag);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    stem.collect(out, prefix + ".stem");
    stem_bn.collect(out, prefix + ".stem_bn");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  }
};

template <typename T>
Tensor<T> backbone_forward(Backbone<T>& backbone, const Tensor<T>& frames) {
  return backbone.forward(frames);
}

// ---------------------------------------------------------------------------

/// Single LSTM layer with separate per-gate matrices (input, forget, cell,
/// output). Forget-gate bias starts at 1.
template <typename T>
struct LstmLayer {
  std::array<Tensor<T>, 4> W;  // [hidden, input]
  std::array<Tensor<T>, 4> U;  // [hidden, hidden]
  std::array<Tensor<T>, 4> b;  // [hidden]

  static constexpr std::array<const char*, 4> kGateNames{"i", "f", "g", "o"};

  LstmLayer() = default;
  LstmLayer(Index input_dim, Index hidden_dim, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    for (int k = 0; k < 4; ++k) {
      W[k] = init::uniform<T>({hidden_dim, input_dim}, limit, rng);
      U[k] = init::uniform<T>({hidden_dim, hidden_dim}, limit, rng);
      b[k] = k == 1 ? Tensor<T>::ones({hidden_dim}, true) : init::uniform<T>({hidden_dim}, limit, rng);
    }
  }

  Index input_dim() const { return W[0].dim(1); }
  Index hidden_dim() const { return W[0].dim(0); }

  /// seq [B,T,D] -> all hidden states [B,T,H], from a zero initial state.
  Tensor<T> sequence(const Tensor<T>& seq) const {
    if (seq.rank() != 3 || seq.dim(2) != input_dim())
      throw ShapeMismatch("lstm expects [B,T," + std::to_string(input_dim()) + "], got " + to_string(seq.shape()));
    const Index B = seq.dim(0), steps = seq.dim(1), H = hidden_dim();
    Tensor<T> w_all = concat<T>({W[0], W[1], W[2], W[3]}, 0);
    Tensor<T> u_t = transpose(concat<T>({U[0], U[1], U[2], U[3]}, 0));
    Tensor<T> b_all = concat<T>({b[0], b[1], b[2], b[3]}, 0);
    Tensor<T> projected = reshape(matmul(reshape(seq, {B * steps, input_dim()}), transpose(w_all)) + b_all, {B, steps, 4 * H});

    Tensor<T> h = Tensor<T>::zeros({B, H});
    Tensor<T> c = Tensor<T>::zeros({B, H});
    std::vector<Tensor<T>> outputs;
    outputs.reserve(static_cast<std::size_t>(steps));
    for (Index t = 0; t < steps; ++t) {
      Tensor<T> z = reshape(slice(projected, 1, t, 1), {B, 4 * H}) + matmul(h, u_t);
      Tensor<T> i = sigmoid(slice(z, 1, 0, H));
      Tensor<T> f = sigmoid(slice(z, 1, H, H));
      Tensor<T> g = tanh(slice(z, 1, 2 * H, H));
      Tensor<T> o = sigmoid(slice(z, 1, 3 * H, H));
      c = f * c + i * g;
      h = o * tanh(c);
      outputs.push_back(reshape(h, {B, 1, H}));
    }
    return concat(outputs, 1);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (int k = 0; k < 4; ++k) {
      out.push_back({prefix + ".W_" + kGateNames[k], W[k]});
      out.push_back({prefix + ".U_" + kGateNames[k], U[k]});
      out.push_back({prefix + ".b_" + kGateNames[k], b[k]});
    }
  }
};

namespace detail {

inline void check_lengths(const std::vector<Index>& lengths, Index batch, Index steps) {
  if (static_cast<Index>(lengths.size()) != batch)
    throw LengthOutOfRange("got " + std::to_string(lengths.size()) + " lengths for batch of " + std::to_string(batch));
  for (Index len : lengths)
    if (len < 1 || len > steps)
      throw LengthOutOfRange("length " + std::to_string(len) + " outside [1, " + std::to_string(steps) + "]");
}

/// Hidden state at t = lengths[b]-1 for each sequence of a [B,T,H] stack.
template <typename T>
Tensor<T> last_valid(const Tensor<T>& states, const std::vector<Index>& lengths) {
  const Index B = states.dim(0), steps = states.dim(1), H = states.dim(2);
  std::vector<Index> rows;
  rows.reserve(lengths.size());
  for (Index i = 0; i < B; ++i) rows.push_back(i * steps + lengths[static_cast<std::size_t>(i)] - 1);
  return gather_rows(reshape(states, {B * steps, H}), rows);
}

}  // namespace detail

/// Runs a stack of LSTM layers over zero-padded sequences and returns the
/// top-layer hidden state at each sequence's last valid step. Padded steps
/// never feed into the returned states.
template <typename T>
Tensor<T> lstm_forward(const std::vector<LstmLayer<T>>& layers, const Tensor<T>& seq, const std::vector<Index>& lengths) {
  if (seq.rank() != 3) throw ShapeMismatch("lstm expects [B,T,D], got " + to_string(seq.shape()));
  detail::check_lengths(lengths, seq.dim(0), seq.dim(1));
  const Index used = *std::max_element(lengths.begin(), lengths.end());
  Tensor<T> x = used == seq.dim(1) ? seq : slice(seq, 1, 0, used);
  for (const auto& layer : layers) x = layer.sequence(x);
  return detail::last_valid(x, lengths);
}

template <typename T>
Tensor<T> lstm_forward(const LstmLayer<T>& layer, const Tensor<T>& seq, const std::vector<Index>& lengths) {
  return lstm_forward(std::vector<LstmLayer<T>>{layer}, seq, lengths);
}

}  // namespace eri
