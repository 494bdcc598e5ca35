#pragma once

#include <string>
#include <vector>

#include "eri/attention.hpp"
#include "eri/metrics.hpp"
#include "eri/optim.hpp"

namespace eri {

inline constexpr Index kExprDim = 8;
inline constexpr Index kAuDim = 12;
inline constexpr Index kVaDim = 2;
inline constexpr Index kDescriptorDim = kExprDim + kAuDim + kVaDim;

/// Whether descriptors carry head activations (softmax/sigmoid/tanh) or raw
/// head outputs.
enum class DescriptorMode { Activated, Logits };

struct MtlDanConfig {
  BackboneConfig backbone;
  Index attention_heads = 4;
  Index attention_reduction = 4;
};

/// Per-frame emotion features; rows are frames.
template <typename T>
struct EmotionDescriptor {
  Tensor<T> expr;    // [N,8]
  Tensor<T> au;      // [N,12]
  Tensor<T> va;      // [N,2]
  Tensor<T> concat;  // [N,22], order expr | au | va
};

/// Every intermediate of one extractor pass.
template <typename T>
struct MtlDanPass {
  Tensor<T> feature_map;  // backbone output [N,C,h,w]
  Tensor<T> pooled;       // GAP of the feature map, the VA task's own feature
  Tensor<T> attn_expr;    // [N,C]
  Tensor<T> attn_au;      // [N,C]
  Tensor<T> shared;       // attn_expr | attn_au
  Tensor<T> expr_logits, au_logits, va_logits;
};

/// Backbone, two attention blocks (EXPR, AU) and three task heads. The VA
/// path bypasses attention; each head reads [shared | own] in R^{3C}.
template <typename T>
class MtlDan {
 public:
  MtlDan() = default;
  MtlDan(const MtlDanConfig& cfg, Rng& rng) : config_(cfg) {
    Rng backbone_rng = rng.fork(1), attn_rng = rng.fork(2), head_rng = rng.fork(3);
    backbone_ = Backbone<T>(cfg.backbone, backbone_rng);
    const Index c = cfg.backbone.feature_dim();
    attn_expr_ = AttentionBlock<T>(c, cfg.attention_heads, cfg.attention_reduction, attn_rng);
    attn_au_ = AttentionBlock<T>(c, cfg.attention_heads, cfg.attention_reduction, attn_rng);
    head_expr_ = Linear<T>(3 * c, kExprDim, head_rng);
    head_au_ = Linear<T>(3 * c, kAuDim, head_rng);
    head_va_ = Linear<T>(3 * c, kVaDim, head_rng);
  }

  const MtlDanConfig& config() const { return config_; }

  MtlDanPass<T> run(const Tensor<T>& frames) {
    MtlDanPass<T> pass;
    pass.feature_map = backbone_.forward(frames);
    pass.pooled = mean(pass.feature_map, {2, 3});
    pass.attn_expr = attn_expr_.forward(pass.feature_map);
    pass.attn_au = attn_au_.forward(pass.feature_map);
    pass.shared = concat<T>({pass.attn_expr, pass.attn_au}, 1);
    pass.expr_logits = head_expr_.forward(concat<T>({pass.shared, pass.attn_expr}, 1));
    pass.au_logits = head_au_.forward(concat<T>({pass.shared, pass.attn_au}, 1));
    pass.va_logits = head_va_.forward(concat<T>({pass.shared, pass.pooled}, 1));
    return pass;
  }

  EmotionDescriptor<T> forward(const Tensor<T>& frames, DescriptorMode mode = DescriptorMode::Activated) {
    MtlDanPass<T> pass = run(frames);
    EmotionDescriptor<T> d;
    if (mode == DescriptorMode::Activated) {
      d.expr = softmax(pass.expr_logits);
      d.au = sigmoid(pass.au_logits);
      d.va = tanh(pass.va_logits);
    } else {
      d.expr = pass.expr_logits;
      d.au = pass.au_logits;
      d.va = pass.va_logits;
    }
    d.concat = concat<T>({d.expr, d.au, d.va}, 1);
    return d;
  }

  /// Frozen parameters receive no gradient and are skipped by optimizers.
  void set_frozen(bool frozen) {
    frozen_ = frozen;
    ParamList<T> params = parameters();
    set_trainable(params, !frozen);
  }
  bool frozen() const { return frozen_; }

  /// Batch-norm mode of the backbone.
  void set_training(bool flag) { backbone_.set_training(flag); }

  ParamList<T> parameters(const std::string& prefix = "mtl_dan") const {
    ParamList<T> out;
    backbone_.collect(out, prefix + ".backbone");
    attn_expr_.collect(out, prefix + ".attn_expr");
    attn_au_.collect(out, prefix + ".attn_au");
    head_expr_.collect(out, prefix + ".head_expr");
    head_au_.collect(out, prefix + ".head_au");
    head_va_.collect(out, prefix + ".head_va");
    return out;
  }

  Backbone<T>& backbone() { return backbone_; }
  AttentionBlock<T>& attn_expr() { return attn_expr_; }
  AttentionBlock<T>& attn_au() { return attn_au_; }
  Linear<T>& head_expr() { return head_expr_; }
  Linear<T>& head_au() { return head_au_; }
  Linear<T>& head_va() { return head_va_; }

 private:
  MtlDanConfig config_;
  Backbone<T> backbone_;
  AttentionBlock<T> attn_expr_, attn_au_;
  Linear<T> head_expr_, head_au_, head_va_;
  bool frozen_ = false;
};

template <typename T>
EmotionDescriptor<T> mtl_dan_forward(MtlDan<T>& model, const Tensor<T>& frames,
                                     DescriptorMode mode = DescriptorMode::Activated) {
  return model.forward(frames, mode);
}

template <typename T>
void set_frozen(MtlDan<T>& model, bool frozen) {
  model.set_frozen(frozen);
}

/// Toy multi-task labels for extractor pretraining.
template <typename T>
struct PretrainBatch {
  Tensor<T> frames;          // [N,C,H,W]
  std::vector<int> expr;     // class in 0..7
  Tensor<T> au;              // [N,12] in {0,1}
  Tensor<T> va;              // [N,2] in [-1,1]
};

/// Multi-task loss: CE(expr) + BCE(au) + (1 - CCC(va)), each averaged over
/// the batch (BCE also over units, CCC over the two VA columns).
template <typename T>
Tensor<T> mtl_pretrain_loss(MtlDan<T>& model, const PretrainBatch<T>& batch) {
  const Index n = batch.frames.dim(0);
  if (static_cast<Index>(batch.expr.size()) != n || batch.au.shape() != Shape{n, kAuDim} ||
      batch.va.shape() != Shape{n, kVaDim})
    throw ShapeMismatch("pretrain labels do not match batch of " + std::to_string(n));
  Vec<T> onehot = Vec<T>::Zero(n * kExprDim);
  for (Index i = 0; i < n; ++i) {
    int cls = batch.expr[static_cast<std::size_t>(i)];
    if (cls < 0 || cls >= kExprDim) throw LabelOutOfRange("expr class " + std::to_string(cls));
    onehot[i * kExprDim + cls] = T(1);
  }
  for (Index i = 0; i < batch.au.size(); ++i)
    if (batch.au[i] != T(0) && batch.au[i] != T(1)) throw LabelOutOfRange("au label must be 0 or 1");
  for (Index i = 0; i < batch.va.size(); ++i)
    if (!(batch.va[i] >= T(-1) && batch.va[i] <= T(1))) throw LabelOutOfRange("va label outside [-1,1]");

  MtlDanPass<T> pass = model.run(batch.frames);
  Tensor<T> target({n, kExprDim}, onehot);
  Tensor<T> ce = -(sum(log_softmax(pass.expr_logits) * target) * (T(1) / static_cast<T>(n)));
  Tensor<T> bce = mean(softplus(pass.au_logits) - pass.au_logits * batch.au);
  Tensor<T> va_loss = correlation_loss(LossKind::Ccc, tanh(pass.va_logits), batch.va);
  return ce + bce + va_loss;
}

/// One optimizer step of multi-task pretraining with batch-norm in training
/// mode. Returns the loss before the update.
template <typename T>
T mtl_pretrain_step(MtlDan<T>& model, const PretrainBatch<T>& batch, Adam<T>& optimizer) {
  if (model.frozen()) throw FrozenModel("pretraining requires an unfrozen extractor");
  model.set_training(true);
  Tensor<T> loss;
  try {
    loss = mtl_pretrain_loss(model, batch);
  } catch (...) {
    model.set_training(false);
    throw;
  }
  model.set_training(false);
  backward(loss);
  optimizer.step();
  return loss.item();
}

}  // namespace eri
