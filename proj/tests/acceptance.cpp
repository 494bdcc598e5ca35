// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "../src/binary_io.hpp"
#include "eri/gradcheck_suite.hpp"
#include "eri/trainer.hpp"

using namespace eri;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Verdict()>& body) {
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// Textbook formulas over plain loops, independent of the library's moment code.
double oracle_pcc(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (Index i = 0; i < x.size(); ++i) sx += x[i], sy += y[i];
  const double mx = sx / n, my = sy / n;
  double num = 0, dx = 0, dy = 0;
  for (Index i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx += (x[i] - mx) * (x[i] - mx);
    dy += (y[i] - my) * (y[i] - my);
  }
  return num / std::sqrt(dx * dy);
}

double oracle_ccc(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double n = static_cast<double>(x.size());
  const double mx = x.sum() / n, my = y.sum() / n;
  double cov = 0, vx = 0, vy = 0;
  for (Index i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my) / n;
    vx += (x[i] - mx) * (x[i] - mx) / n;
    vy += (y[i] - my) * (y[i] - my) / n;
  }
  return 2 * cov / (vx + vy + (mx - my) * (mx - my));
}

Tensor<double> matrix_tensor(const Eigen::MatrixXd& m) {
  Vec<double> v(m.size());
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) v[r * m.cols() + c] = m(r, c);
  return Tensor<double>({m.rows(), m.cols()}, std::move(v));
}

bool any_grad(const ParamList<double>& params, const std::string& prefix) {
  for (const auto& p : params)
    if (p.name.rfind(prefix, 0) == 0 && p.tensor.has_grad() && p.tensor.grad().cwiseAbs().maxCoeff() > 0) return true;
  return false;
}

RunConfig learning_config(const fs::path& root) {
  RunConfig cfg;
  cfg.data_dir = (root / "data").string();
  cfg.n_videos = 64;
  cfg.seed = 7;
  cfg.signal_strength = 1.0;
  cfg.freeze_extractor = true;
  cfg.steps = 500;
  cfg.epochs = 1000;
  return cfg;
}

double final_train_pcc(const RunConfig& cfg) {
  std::ostringstream sink;
  return cmd_train(cfg, sink).epochs.back().train_mean_pcc;
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "eri_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  criterion("gradient suite", [] {
    auto start = Clock::now();
    auto rows = gradcheck_ops(7);
    const double elapsed = seconds_since(start);
    double worst = 0;
    std::string worst_name, failed;
    for (const auto& r : rows) {
      if (r.max_relative_error > worst) worst = r.max_relative_error, worst_name = r.name;
      if (!(r.max_relative_error < 1e-4)) failed += " " + r.name;
    }
    Verdict v{failed.empty() && elapsed < 120.0,
              std::to_string(rows.size()) + " ops, max rel error " + fmt(worst) + " (" + worst_name + "), " + fmt(elapsed) +
                  " s"};
    if (!failed.empty()) v.detail += ", over 1e-4:" + failed;
    return v;
  });

  criterion("metric oracle", [] {
    Rng rng(2024);
    double worst = 0;
    bool bounded = true;
    for (int trial = 0; trial < 100; ++trial) {
      const Index n = rng.uniform_int(2, 200);
      Eigen::MatrixXd p(n, kCategories), t(n, kCategories);
      for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal(), t.data()[i] = rng.normal(0.3, 2.0);
      p.col(trial % kCategories) += 0.5 * t.col(trial % kCategories);
      auto report = evaluate_mean_pcc(p, t);
      double mean = 0;
      for (Index c = 0; c < kCategories; ++c) {
        const double op = oracle_pcc(p.col(c), t.col(c)), oc = oracle_ccc(p.col(c), t.col(c));
        const double lp = pcc(p.col(c), t.col(c)), lc = ccc(p.col(c), t.col(c));
        worst = std::max({worst, std::abs(lp - op), std::abs(lc - oc), std::abs(report.per_category[c] - op)});
        if (std::abs(lc) > std::abs(lp) + 1e-15) bounded = false;
        mean += op / kCategories;
      }
      worst = std::max(worst, std::abs(report.mean_pcc - mean));
    }
    const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{-1, -2, -3, -4};
    const bool perfect = std::abs(pcc(a, b) - 1.0) < 1e-12 && std::abs(pcc(a, c) + 1.0) < 1e-12;
    const double fixed_ccc = ccc(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4});
    const bool four_sevenths = std::abs(fixed_ccc - 4.0 / 7.0) < 1e-12;
    return Verdict{worst <= 1e-10 && bounded && perfect && four_sevenths,
                   "max |lib - oracle| " + fmt(worst) + " over 100 instances, pcc +-1 " + (perfect ? "ok" : "wrong") +
                       ", ccc 4/7 " + (four_sevenths ? "ok" : "wrong") + ", |CCC|<=|PCC| " + (bounded ? "ok" : "violated")};
  });

  criterion("architecture contract", [] {
    RunConfig cfg;
    ModelSet models = make_models(cfg);
    Rng rng(5);
    Vec<float> v(Vec<float>::Random(5 * 3 * 32 * 32));
    auto d = models.extractor.forward(Tensor<float>({5, 3, 32, 32}, v));
    const bool dims = kDescriptorDim == 22 && d.expr.dim(1) == 8 && d.au.dim(1) == 12 && d.va.dim(1) == 2 &&
                      d.concat.dim(1) == 22;
    std::vector<Tensor<float>> seqs{d.concat, slice(d.concat, 0, 0, 3), slice(d.concat, 0, 0, 1)};
    auto out = models.head.forward(pad_and_stack(seqs), {5, 3, 1});
    const bool shape = out.dim(0) == 3 && out.dim(1) == 7;
    const bool range = out.data().minCoeff() > 0.0f && out.data().maxCoeff() < 1.0f;

    RunConfig small;
    small.backbone.stage_channels = {4, 4, 8, 8};
    small.backbone.input_height = small.backbone.input_width = 16;
    small.attention_heads = 2;
    small.attention_reduction = 2;
    Rng mrng(9);
    MtlDan<double> model(small.mtl_config(), mrng);
    Vec<double> fv(Vec<double>::Random(2 * 3 * 16 * 16));
    Tensor<double> frames({2, 3, 16, 16}, fv);
    backward(sum(model.run(frames).va_logits));
    auto params = model.parameters();
    const bool va_reaches_attention = any_grad(params, "mtl_dan.attn_expr") && any_grad(params, "mtl_dan.attn_au");
    for (auto& p : params) p.tensor.zero_grad();
    backward(sum(model.run(frames).pooled));
    const bool pooled_isolated = !any_grad(params, "mtl_dan.attn_expr") && !any_grad(params, "mtl_dan.attn_au") &&
                                 any_grad(params, "mtl_dan.backbone");
    const bool ok = dims && shape && range && va_reaches_attention && pooled_isolated;
    return Verdict{ok, "descriptor " + std::to_string(d.concat.dim(1)) + " dims, output " + to_string(out.shape()) +
                           " in [" + fmt(out.data().minCoeff()) + ", " + fmt(out.data().maxCoeff()) +
                           "], pooled path attention-free " + (pooled_isolated ? "yes" : "no")};
  });

  criterion("freezing contract", [] {
    RunConfig cfg;
    cfg.backbone.stage_channels = {8, 8, 16, 16};
    cfg.backbone.input_height = cfg.backbone.input_width = 16;
    cfg.attention_heads = 2;
    cfg.lstm_hidden = 16;
    ModelSet models = make_models(cfg);
    std::vector<Vec<float>> extractor_before, head_before;
    for (const auto& p : models.extractor.parameters()) extractor_before.push_back(p.tensor.data());
    for (const auto& p : models.head.parameters()) head_before.push_back(p.tensor.data());
    Adam<float> opt(models.head.parameters());
    Rng rng(13);
    for (int step = 0; step < 100; ++step) {
      std::vector<Tensor<float>> frames;
      for (Index b = 0; b < 4; ++b) {
        const Index t = 2 + b;
        Vec<float> v(Vec<float>::Random(t * 3 * 16 * 16));
        frames.emplace_back(Shape{t, 3, 16, 16}, v);
      }
      Vec<float> y(4 * 7);
      for (Index i = 0; i < y.size(); ++i) y[i] = static_cast<float>(rng.uniform());
      eri_train_step(models.extractor, models.head, frames, Tensor<float>({4, 7}, y), LossKind::Pcc, opt);
    }
    auto extractor_after = models.extractor.parameters();
    bool unchanged = true;
    for (std::size_t i = 0; i < extractor_after.size(); ++i)
      unchanged = unchanged && extractor_after[i].tensor.data() == extractor_before[i];
    auto head_after = models.head.parameters();
    std::size_t changed = 0;
    for (std::size_t i = 0; i < head_after.size(); ++i) changed += head_after[i].tensor.data() != head_before[i];
    return Verdict{unchanged && changed == head_after.size(),
                   std::string("extractor bytes ") + (unchanged ? "unchanged" : "CHANGED") + ", " + std::to_string(changed) +
                       "/" + std::to_string(head_after.size()) + " head tensors updated after 100 steps"};
  });

  criterion("sampler contract", [] {
    Index bad = 0;
    for (Index n = 1; n <= 10000; ++n) {
      auto idx = sample_frame_indices(n);
      if (static_cast<Index>(idx.size()) != (n + 29) / 30) ++bad;
    }
    const auto a = sample_frame_indices(300).size(), b = sample_frame_indices(349).size();
    return Verdict{bad == 0 && a == 10 && b == 12, std::to_string(bad) + " mismatches in 1..10000, 300->" +
                                                       std::to_string(a) + ", 349->" + std::to_string(b)};
  });

  criterion("learning capability", [&] {
    auto start = Clock::now();
    RunConfig cfg = learning_config(root);
    std::ostringstream sink;
    cmd_synth(cfg, sink);
    cfg.out_dir = (root / "learn").string();
    const double real = final_train_pcc(cfg);
    cfg.out_dir = (root / "learn_shuffled").string();
    cfg.shuffle_labels = true;
    const double shuffled = final_train_pcc(cfg);
    const double elapsed = seconds_since(start);
    return Verdict{real >= 0.9 && shuffled < 0.3 && elapsed < 600.0,
                   "train mean PCC " + fmt(real) + " (need >= 0.9), shuffled control " + fmt(shuffled) +
                       " (need < 0.3), " + fmt(elapsed) + " s"};
  });

  criterion("loss variant distinction", [&] {
    RunConfig cfg = learning_config(root);
    auto manifest = read_manifest(fs::path(cfg.data_dir) / "manifest.csv");
    auto samples = load_split(manifest, cfg.data_dir, Split::Train, cfg.label_norm);
    Eigen::MatrixXd target = label_matrix(samples);
    Eigen::MatrixXd shifted = target.array() + 0.2;
    const double pcc_loss = correlation_loss(LossKind::Pcc, matrix_tensor(shifted), matrix_tensor(target)).item();
    const double ccc_loss = correlation_loss(LossKind::Ccc, matrix_tensor(shifted), matrix_tensor(target)).item();
    // A perfectly correlated column scores var / (var + eps) because of the loss's denominator guard.
    double floor = 0;
    for (Index c = 0; c < target.cols(); ++c) {
      const double var = (target.col(c).array() - target.col(c).mean()).square().mean();
      floor += (1.0 - var / (var + kCorrelationEps)) / static_cast<double>(target.cols());
    }
    const bool pcc_zero = std::abs(pcc_loss - floor) < 1e-9 && floor < 1e-5;
    return Verdict{pcc_zero && ccc_loss > 0.05 && ccc_loss > pcc_loss,
                   "pred = target + 0.2 on " + std::to_string(target.rows()) + " train labels: PCC loss " + fmt(pcc_loss) +
                       " (eps floor " + fmt(floor) + "), CCC loss " + fmt(ccc_loss)};
  });

  criterion("reproducibility", [&] {
    RunConfig cfg = learning_config(root);
    cfg.out_dir = (root / "repro").string();
    cfg.steps = 40;
    const std::vector<std::string> outputs{"train_report.csv", "best.ckpt", "final.ckpt"};
    std::vector<std::string> first;
    std::ostringstream sink;
    cmd_train(cfg, sink);
    for (const auto& f : outputs) first.push_back(io::read_file((fs::path(cfg.out_dir) / f).string()));
    fs::remove_all(cfg.out_dir);
    cmd_train(cfg, sink);
    std::string differing;
    for (std::size_t i = 0; i < outputs.size(); ++i)
      if (io::read_file((fs::path(cfg.out_dir) / outputs[i]).string()) != first[i]) differing += " " + outputs[i];
    return Verdict{differing.empty(), differing.empty() ? "checkpoints and report byte-identical across two runs"
                                                        : "differing:" + differing};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
