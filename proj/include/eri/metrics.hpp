#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eri/ops.hpp"

namespace eri {

/// Population moments of a paired sample, computed in two passes.
struct PairMoments {
  double mean_x = 0, mean_y = 0;
  double var_x = 0, var_y = 0;
  double cov = 0;
};

template <typename DerivedX, typename DerivedY>
PairMoments pair_moments(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  if (x.size() != y.size())
    throw ShapeMismatch("paired samples of length " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  if (x.size() < 2) throw BatchTooSmall("correlation needs n >= 2, got " + std::to_string(x.size()));
  const auto xd = x.template cast<double>().eval();
  const auto yd = y.template cast<double>().eval();
  const double n = static_cast<double>(xd.size());
  PairMoments m;
  m.mean_x = xd.sum() / n;
  m.mean_y = yd.sum() / n;
  auto cx = (xd.array() - m.mean_x).eval();
  auto cy = (yd.array() - m.mean_y).eval();
  m.var_x = cx.square().sum() / n;
  m.var_y = cy.square().sum() / n;
  m.cov = (cx * cy).sum() / n;
  return m;
}

/// Pearson correlation with population moments, clamped to [-1, 1].
/// Throws ZeroVariance when either standard deviation is below 1e-12.
template <typename DerivedX, typename DerivedY>
double pcc(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  PairMoments m = pair_moments(x, y);
  const double sx = std::sqrt(m.var_x), sy = std::sqrt(m.var_y);
  if (sx < 1e-12 || sy < 1e-12) throw ZeroVariance("standard deviation below 1e-12");
  return std::clamp(m.cov / (sx * sy), -1.0, 1.0);
}

/// Lin's concordance correlation 2 cov / (var_x + var_y + (mean_x - mean_y)^2).
template <typename DerivedX, typename DerivedY>
double ccc(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  PairMoments m = pair_moments(x, y);
  const double shift = m.mean_x - m.mean_y;
  const double denom = m.var_x + m.var_y + shift * shift;
  if (denom < 1e-12) throw ZeroDenominator("both samples constant and equal");
  return std::clamp(2.0 * m.cov / denom, -1.0, 1.0);
}

inline double pcc(const std::vector<double>& x, const std::vector<double>& y) {
  using Map = Eigen::Map<const Eigen::VectorXd>;
  return pcc(Map(x.data(), static_cast<Index>(x.size())), Map(y.data(), static_cast<Index>(y.size())));
}

inline double ccc(const std::vector<double>& x, const std::vector<double>& y) {
  using Map = Eigen::Map<const Eigen::VectorXd>;
  return ccc(Map(x.data(), static_cast<Index>(x.size())), Map(y.data(), static_cast<Index>(y.size())));
}

struct CorrelationReport {
  std::vector<double> per_category;
  double mean_pcc = 0.0;
  Index n_samples = 0;
  std::vector<int> degenerate_categories;  // zero variance; scored 0
};

/// Per-column PCC over the whole split and its arithmetic mean. Columns whose
/// predictions or targets have zero variance score 0 and are listed.
template <typename DerivedP, typename DerivedT>
CorrelationReport evaluate_mean_pcc(const Eigen::MatrixBase<DerivedP>& preds, const Eigen::MatrixBase<DerivedT>& targets) {
  if (preds.rows() != targets.rows())
    throw RowCountMismatch(std::to_string(preds.rows()) + " prediction rows vs " + std::to_string(targets.rows()) +
                           " target rows");
  if (preds.cols() != targets.cols())
    throw ShapeMismatch(std::to_string(preds.cols()) + " prediction columns vs " + std::to_string(targets.cols()));
  if (preds.rows() < 2) throw BatchTooSmall("mean PCC needs at least 2 rows");
  CorrelationReport report;
  report.n_samples = preds.rows();
  for (Index c = 0; c < preds.cols(); ++c) {
    double value = 0.0;
    try {
      value = pcc(preds.col(c), targets.col(c));
    } catch (const ZeroVariance&) {
      report.degenerate_categories.push_back(static_cast<int>(c));
    }
    report.per_category.push_back(value);
  }
  double total = 0.0;
  for (double v : report.per_category) total += v;
  report.mean_pcc = total / static_cast<double>(report.per_category.size());
  return report;
}

// ---------------------------------------------------------------------------
// Differentiable forms

enum class LossKind { Pcc, Ccc };

inline const char* to_string(LossKind kind) { return kind == LossKind::Pcc ? "pcc" : "ccc"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "pcc") return LossKind::Pcc;
  if (s == "ccc") return LossKind::Ccc;
  throw ConfigInvalid("loss must be pcc or ccc, got '" + s + "'");
}

inline constexpr double kCorrelationEps = 1e-8;

/// Column-wise correlation of pred [B,K] against a constant target [B,K],
/// returned as [K]. Every denominator carries +1e-8 so a constant predictor
/// yields a finite value and gradient.
template <typename T>
Tensor<T> column_correlation(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape() || pred.rank() != 2)
    throw ShapeMismatch("correlation expects equal [B,K] shapes, got " + to_string(pred.shape()) + " and " +
                        to_string(target.shape()));
  if (pred.dim(0) < 2) throw BatchTooSmall("correlation loss needs B >= 2, got " + std::to_string(pred.dim(0)));
  const T eps = static_cast<T>(kCorrelationEps);
  Tensor<T> y = target.detach();
  Tensor<T> mu_p = mean(pred, {0});
  Tensor<T> mu_t = mean(y, {0});
  Tensor<T> dp = pred - mu_p;
  Tensor<T> dt = y - mu_t;
  Tensor<T> cov = mean(dp * dt, {0});
  Tensor<T> var_p = mean(square(dp), {0});
  Tensor<T> var_t = mean(square(dt), {0});
  if (kind == LossKind::Pcc) return cov / (sqrt(var_p + eps) * sqrt(var_t + eps));
  return (cov * T(2)) / (var_p + var_t + square(mu_p - mu_t) + eps);
}

/// 1 - mean over columns of the column correlation.
template <typename T>
Tensor<T> correlation_loss(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  return rsub_scalar(T(1), mean(column_correlation(kind, pred, target)));
}

}  // namespace eri
