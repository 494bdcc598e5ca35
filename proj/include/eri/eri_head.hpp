#pragma once

#include <array>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "eri/mtl_dan.hpp"

namespace eri {

inline constexpr Index kCategories = 7;

/// Reaction categories in output order.
inline constexpr std::array<std::string_view, kCategories> kCategoryNames{
    "adoration", "amusement", "anxiety", "disgust", "empathic_pain", "fear", "surprise"};

struct EriHeadConfig {
  Index hidden = 64;
  Index layers = 1;
};

/// Descriptor sequence -> stacked LSTM -> linear -> sigmoid -> 7 intensities.
template <typename T>
struct EriHead {
  std::vector<LstmLayer<T>> lstm;
  Linear<T> fc;

  EriHead() = default;
  EriHead(const EriHeadConfig& cfg, Rng& rng) {
    if (cfg.hidden < 1 || cfg.layers < 1) throw ConfigInvalid("lstm hidden size and layer count must be >= 1");
    Index in = kDescriptorDim;
    for (Index l = 0; l < cfg.layers; ++l) {
      lstm.emplace_back(in, cfg.hidden, rng);
      in = cfg.hidden;
    }
    fc = Linear<T>(cfg.hidden, kCategories, rng);
  }

  /// descriptors [B,T,22] zero-padded, lengths[b] in [1,T] -> [B,7] in (0,1).
  Tensor<T> forward(const Tensor<T>& descriptors, const std::vector<Index>& lengths) const {
    if (descriptors.rank() != 3 || descriptors.dim(2) != kDescriptorDim)
      throw ShapeMismatch("eri head expects [B,T,22], got " + to_string(descriptors.shape()));
    return sigmoid(fc.forward(lstm_forward(lstm, descriptors, lengths)));
  }

  ParamList<T> parameters(const std::string& prefix = "eri_head") const {
    ParamList<T> out;
    for (std::size_t l = 0; l < lstm.size(); ++l) lstm[l].collect(out, prefix + ".lstm" + std::to_string(l));
    fc.collect(out, prefix + ".fc");
    return out;
  }
};

template <typename T>
Tensor<T> eri_forward(const EriHead<T>& head, const Tensor<T>& descriptors, const std::vector<Index>& lengths) {
  return head.forward(descriptors, lengths);
}

/// Zero-pads per-sample [T_b,D] sequences to [B,T_max,D].
template <typename T>
Tensor<T> pad_and_stack(const std::vector<Tensor<T>>& sequences) {
  if (sequences.empty()) throw ShapeMismatch("no sequences to stack");
  Index t_max = 0;
  for (const auto& s : sequences) t_max = std::max(t_max, s.dim(0));
  const Index width = sequences.front().dim(1);
  std::vector<Tensor<T>> rows;
  for (const auto& s : sequences) {
    if (s.rank() != 2 || s.dim(1) != width) throw ShapeMismatch("sequence " + to_string(s.shape()) + " in stack");
    Tensor<T> padded = s.dim(0) == t_max ? s : concat<T>({s, Tensor<T>::zeros({t_max - s.dim(0), width})}, 0);
    rows.push_back(reshape(padded, {1, t_max, width}));
  }
  return concat(rows, 0);
}

namespace detail {

template <typename T>
std::vector<Vec<T>> snapshot(const ParamList<T>& params) {
  std::vector<Vec<T>> out;
  for (const auto& p : params) out.push_back(p.tensor.data());
  return out;
}

template <typename T>
void check_unchanged(const ParamList<T>& params, const std::vector<Vec<T>>& before) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Vec<T>& now = params[i].tensor.data();
    if (now.size() != before[i].size() ||
        std::memcmp(now.data(), before[i].data(), sizeof(T) * static_cast<std::size_t>(now.size())) != 0)
      throw FrozenViolation("frozen parameter '" + params[i].name + "' changed during a head update");
  }
}

}  // namespace detail

/// Correlation-loss step on precomputed descriptors; updates only the head.
template <typename T>
T eri_train_step(EriHead<T>& head, const Tensor<T>& descriptors, const std::vector<Index>& lengths,
                 const Tensor<T>& labels, LossKind kind, Adam<T>& optimizer) {
  if (descriptors.dim(0) < 2) throw BatchTooSmall("correlation training needs B >= 2, got " + std::to_string(descriptors.dim(0)));
  Tensor<T> loss = correlation_loss(kind, head.forward(descriptors, lengths), labels);
  backward(loss);
  optimizer.step();
  return loss.item();
}

/// Full step: per-sample frames [T_b,C,H,W] through the extractor, then the
/// head. With a frozen extractor its parameter bytes are verified unchanged.
template <typename T>
T eri_train_step(MtlDan<T>& extractor, EriHead<T>& head, const std::vector<Tensor<T>>& frames,
                 const Tensor<T>& labels, LossKind kind, Adam<T>& optimizer,
                 DescriptorMode mode = DescriptorMode::Activated) {
  if (frames.size() < 2) throw BatchTooSmall("correlation training needs B >= 2, got " + std::to_string(frames.size()));
  ParamList<T> extractor_params = extractor.parameters();
  std::vector<Vec<T>> before;
  if (extractor.frozen()) before = detail::snapshot(extractor_params);

  std::vector<Tensor<T>> sequences;
  std::vector<Index> lengths;
  for (const auto& f : frames) {
    sequences.push_back(extractor.forward(f, mode).concat);
    lengths.push_back(f.dim(0));
  }
  T loss = eri_train_step(head, pad_and_stack(sequences), lengths, labels, kind, optimizer);
  if (extractor.frozen()) detail::check_unchanged(extractor_params, before);
  return loss;
}

}  // namespace eri
