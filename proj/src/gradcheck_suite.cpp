#include "eri/gradcheck_suite.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "eri/grad_check.hpp"

namespace eri {

namespace {

using D = double;
using T = Tensor<D>;

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec<D> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return T(std::move(shape), std::move(v), true);
}

/// Values bounded away from zero, for kinked or singular ops.
T away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
  Vec<D> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return T(std::move(shape), std::move(v), true);
}

/// Scalar loss <op(inputs), W> with a fixed random W, so that every output
/// coordinate contributes a gradient of order one.
class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  void check(const std::string& name, std::vector<std::pair<std::string, T>> inputs, const std::function<T()>& op) {
    T probe_out = op();
    T weights = random_tensor(probe_out.shape(), rng_, 0.5, 1.5).detach();
    auto loss_fn = [&] { return sum(op() * weights); };
    run(name, inputs, loss_fn);
  }

  /// For ops that already produce a scalar loss.
  void check_scalar(const std::string& name, std::vector<std::pair<std::string, T>> inputs, const std::function<T()>& op) {
    run(name, inputs, op);
  }

  Rng& rng() { return rng_; }
  std::vector<GradCheckRow> rows;

 private:
  template <typename Fn>
  void run(const std::string& name, const std::vector<std::pair<std::string, T>>& inputs, Fn&& loss_fn) {
    std::vector<Probe<D>> probes;
    for (const auto& [label, t] : inputs)
      for (Index i = 0; i < t.size(); ++i) probes.push_back({label, t, i});
    GradCheckReport r = grad_check_probes<D>(loss_fn, probes, kGradCheckEps);
    rows.push_back({name, r.max_relative_error, kOpsThreshold, r.worst, r.checked});
  }

  Rng rng_;
};

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 3);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<GradCheckRow> gradcheck_ops(std::uint64_t seed) {
  Suite s(seed);
  Rng& rng = s.rng();

  {
    T a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    s.check("add", {{"a", a}, {"b", b}}, [=] { return a + b; });
    s.check("sub", {{"a", a}, {"b", b}}, [=] { return a - b; });
    s.check("mul", {{"a", a}, {"b", b}}, [=] { return a * b; });
    T c = away_from_zero({3, 1}, rng, 0.5, 1.5);
    s.check("div", {{"a", a}, {"c", c}}, [=] { return a / c; });
    s.check("add_scalar", {{"a", a}}, [=] { return a + D(0.7); });
    s.check("mul_scalar", {{"a", a}}, [=] { return a * D(-1.3); });
  }
  {
    T x = away_from_zero({2, 5}, rng, 0.05, 2.0);
    s.check("relu", {{"x", x}}, [=] { return relu(x); });
    T y = random_tensor({2, 5}, rng, -2.0, 2.0);
    s.check("sigmoid", {{"x", y}}, [=] { return sigmoid(y); });
    s.check("tanh", {{"x", y}}, [=] { return tanh(y); });
    s.check("exp", {{"x", y}}, [=] { return exp(y); });
    s.check("square", {{"x", y}}, [=] { return square(y); });
    s.check("softplus", {{"x", y}}, [=] { return softplus(y); });
    s.check("softmax", {{"x", y}}, [=] { return softmax(y); });
    s.check("log_softmax", {{"x", y}}, [=] { return log_softmax(y); });
    T p = random_tensor({2, 5}, rng, 0.3, 2.0);
    s.check("log", {{"x", p}}, [=] { return log(p); });
    s.check("sqrt", {{"x", p}}, [=] { return sqrt(p); });
  }
  {
    T a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    s.check("matmul", {{"a", a}, {"b", b}}, [=] { return matmul(a, b); });
    s.check("transpose", {{"a", a}}, [=] { return transpose(a); });
  }
  {
    T x = random_tensor({2, 3, 5, 5}, rng), k = random_tensor({4, 3, 3, 3}, rng);
    s.check("conv2d", {{"x", x}, {"kernel", k}}, [=] { return conv2d(x, k, 1, 1); });
    s.check("conv2d_stride2", {{"x", x}, {"kernel", k}}, [=] { return conv2d(x, k, 2, 1); });
  }
  {
    T x = random_tensor({2, 3, 4}, rng);
    s.check("sum", {{"x", x}}, [=] { return sum(x, {1}); });
    s.check("mean", {{"x", x}}, [=] { return mean(x, {0, 2}, true); });
    // distinct values keep the argmax stable under +-eps
    Vec<D> v(24);
    for (Index i = 0; i < 24; ++i) v[i] = 0.1 * static_cast<double>((i * 7) % 24);
    T m(Shape{2, 3, 4}, v, true);
    s.check("max", {{"x", m}}, [=] { return max(m, {2}); });
    s.check("reshape", {{"x", x}}, [=] { return reshape(x, {6, 4}); });
    T y = random_tensor({2, 1, 4}, rng);
    s.check("concat", {{"x", x}, {"y", y}}, [=] { return concat<D>({x, y}, 1); });
    s.check("slice", {{"x", x}}, [=] { return slice(x, 2, 1, 2); });
    T r = random_tensor({5, 3}, rng);
    s.check("gather_rows", {{"x", r}}, [=] { return gather_rows(r, {4, 0, 4, 2}); });
  }
  {
    Linear<D> lin(4, 3, rng);
    lin.bias = random_tensor({3}, rng);
    T x = random_tensor({5, 4}, rng);
    s.check("linear", {{"x", x}, {"weight", lin.weight}, {"bias", lin.bias}}, [=] { return lin.forward(x); });
  }
  {
    auto bn = std::make_shared<BatchNorm2d<D>>(3);
    bn->training = true;
    bn->gamma = random_tensor({3}, rng, 0.5, 1.5);
    bn->beta = random_tensor({3}, rng);
    T x = random_tensor({2, 3, 3, 3}, rng);
    s.check("batchnorm_train", {{"x", x}, {"gamma", bn->gamma}, {"beta", bn->beta}}, [=] { return bn->forward(x); });
  }
  {
    LstmLayer<D> lstm(4, 5, rng);
    T seq = random_tensor({2, 3, 4}, rng);
    std::vector<std::pair<std::string, T>> inputs{{"seq", seq}};
    for (int k = 0; k < 4; ++k) {
      const std::string g = LstmLayer<D>::kGateNames[static_cast<std::size_t>(k)];
      inputs.push_back({"W_" + g, lstm.W[static_cast<std::size_t>(k)]});
      inputs.push_back({"U_" + g, lstm.U[static_cast<std::size_t>(k)]});
      inputs.push_back({"b_" + g, lstm.b[static_cast<std::size_t>(k)]});
    }
    s.check("lstm_3_steps", inputs, [=] { return lstm_forward(lstm, seq, {3, 2}); });
  }
  {
    CrossAttentionHead<D> head(8, 4, rng);
    head.spatial_reduce.bias = random_tensor({2}, rng, -0.5, 0.5);
    head.spatial_map.bias = random_tensor({1}, rng, -0.5, 0.5);
    head.channel_reduce.bias = random_tensor({2}, rng, -0.5, 0.5);
    head.channel_expand.bias = random_tensor({8}, rng, -0.5, 0.5);
    T fmap = random_tensor({2, 8, 3, 3}, rng);
    ParamList<D> params;
    head.collect(params, "head");
    std::vector<std::pair<std::string, T>> inputs{{"fmap", fmap}};
    for (const auto& p : params) inputs.push_back({p.name, p.tensor});
    s.check("attention_head", inputs, [=] { return head.forward(fmap); });
  }
  {
    T pred = random_tensor({6, 3}, rng, 0.1, 0.9);
    T target = random_tensor({6, 3}, rng, 0.0, 1.0).detach();
    s.check_scalar("pcc_loss", {{"pred", pred}}, [=] { return correlation_loss(LossKind::Pcc, pred, target); });
    s.check_scalar("ccc_loss", {{"pred", pred}}, [=] { return correlation_loss(LossKind::Ccc, pred, target); });
  }
  return s.rows;
}

std::vector<GradCheckRow> gradcheck_model(const RunConfig& config, Index probes_per_tensor) {
  config.validate();
  Rng root(config.seed);
  Rng extractor_rng = root.fork(11);
  Rng head_rng = root.fork(12);
  Rng data_rng = root.fork(41);
  MtlDan<D> extractor(config.mtl_config(), extractor_rng);
  EriHead<D> head(config.head_config(), head_rng);
  extractor.set_frozen(config.freeze_extractor);

  const BackboneConfig& bb = config.backbone;
  const std::vector<Index> lengths{3, 2, 1};
  std::vector<T> frames;
  for (Index len : lengths) {
    Vec<D> v(len * bb.input_channels * bb.input_height * bb.input_width);
    for (Index i = 0; i < v.size(); ++i) v[i] = data_rng.uniform(-1.0, 1.0);
    frames.emplace_back(Shape{len, bb.input_channels, bb.input_height, bb.input_width}, std::move(v));
  }
  Vec<D> y(static_cast<Index>(lengths.size()) * kCategories);
  for (Index i = 0; i < y.size(); ++i) y[i] = data_rng.uniform(0.0, 1.0);
  const T targets(Shape{static_cast<Index>(lengths.size()), kCategories}, y);

  auto descriptors = [&] {
    std::vector<T> seqs;
    for (const auto& f : frames) seqs.push_back(extractor.forward(f, config.descriptor_mode).concat);
    return pad_and_stack(seqs);
  };
  const bool frozen = extractor.frozen();
  const T cached = frozen ? descriptors().detach() : T();
  auto loss_fn = [&] {
    return correlation_loss(config.loss, head.forward(frozen ? cached : descriptors(), lengths), targets);
  };

  ParamList<D> params;
  if (!frozen) params = extractor.parameters();
  for (const auto& p : head.parameters()) params.push_back(p);

  std::vector<GradCheckRow> rows;
  for (const auto& p : params) {
    if (p.buffer || !p.tensor.requires_grad()) continue;
    std::vector<Probe<D>> probes;
    for (Index k = 0; k < std::min(probes_per_tensor, p.tensor.size()); ++k)
      probes.push_back({p.name, p.tensor, static_cast<Index>(data_rng.uniform_int(0, p.tensor.size() - 1))});
    GradCheckReport r = grad_check_probes<D>(loss_fn, probes, kGradCheckEps);
    rows.push_back({p.name, r.max_relative_error, kModelThreshold, r.worst, r.checked});
  }
  return rows;
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream out;
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  out << pad("name") << "max_rel_error  threshold  status\n";
  for (const auto& r : rows)
    out << pad(r.name) << fmt(r.max_relative_error) << "      " << fmt(r.threshold) << "  " << (r.passed() ? "PASS" : "FAIL")
        << '\n';
  return out.str();
}

}  // namespace eri
