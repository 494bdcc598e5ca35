#include "eri/trainer.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "eri/hash.hpp"

namespace eri {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double mean_pcc_of(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets) {
  return evaluate_mean_pcc(preds, targets).mean_pcc;
}

void shuffle_labels(std::vector<SequenceSample>& samples, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = samples.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(samples[i - 1].raw_label, samples[j].raw_label);
    std::swap(samples[i - 1].norm_label, samples[j].norm_label);
  }
}

std::string read_manifest_bytes(const fs::path& data_dir) { return io::read_file((data_dir / "manifest.csv").string()); }

}  // namespace

std::vector<Tensor<float>> extract_descriptors(MtlDan<float>& extractor, const std::vector<SequenceSample>& samples,
                                               DescriptorMode mode, int threads) {
  std::vector<Tensor<float>> out(samples.size());
  auto run = [&](std::size_t i) { out[i] = extractor.forward(samples[i].frames, mode).concat.detach(); };
  if (threads <= 1 || samples.size() < 2) {
    for (std::size_t i = 0; i < samples.size(); ++i) run(i);
    return out;
  }
  const auto workers = static_cast<std::size_t>(threads);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < samples.size(); i += workers) run(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Eigen::MatrixXd predict(const EriHead<float>& head, const std::vector<Tensor<float>>& descriptors) {
  constexpr std::size_t kChunk = 64;
  Eigen::MatrixXd out(static_cast<Index>(descriptors.size()), kCategories);
  for (std::size_t start = 0; start < descriptors.size(); start += kChunk) {
    const std::size_t end = std::min(descriptors.size(), start + kChunk);
    std::vector<Tensor<float>> seqs(descriptors.begin() + static_cast<std::ptrdiff_t>(start),
                                    descriptors.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<Index> lengths;
    for (const auto& s : seqs) lengths.push_back(s.dim(0));
    Tensor<float> y = head.forward(pad_and_stack(seqs), lengths);
    for (std::size_t b = 0; b < seqs.size(); ++b)
      for (Index k = 0; k < kCategories; ++k)
        out(static_cast<Index>(start + b), k) = y[static_cast<Index>(b) * kCategories + k];
  }
  return out;
}

Eigen::MatrixXd label_matrix(const std::vector<SequenceSample>& samples) {
  Eigen::MatrixXd out(static_cast<Index>(samples.size()), kCategories);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (Index k = 0; k < kCategories; ++k) out(static_cast<Index>(i), k) = samples[i].norm_label[static_cast<std::size_t>(k)];
  return out;
}

std::string report_preamble(const RunConfig& config, const std::string& manifest_sha256) {
  std::ostringstream out;
  std::istringstream lines(config.serialize());
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << '\n';
  out << "# manifest_sha256=" << manifest_sha256 << '\n';
  return out.str();
}

SyntheticDataset cmd_synth(const RunConfig& config, std::ostream& out) {
  SynthConfig synth = config.synth_config();
  synth.validate();
  SyntheticDataset ds = generate_synthetic(synth, config.data_dir);
  out << "wrote " << ds.manifest.rows.size() << " videos to " << config.data_dir << '\n';
  return ds;
}

TrainSummary cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  const fs::path data_dir = config.data_dir;
  const std::string manifest_bytes = read_manifest_bytes(data_dir);
  const Manifest manifest = read_manifest(data_dir / "manifest.csv");
  std::vector<SequenceSample> train = load_split(manifest, data_dir, Split::Train, config.label_norm, config.workers);
  std::vector<SequenceSample> val = load_split(manifest, data_dir, Split::Val, config.label_norm, config.workers);
  if (train.empty()) throw SplitEmpty("split 'train' has no rows in " + (data_dir / "manifest.csv").string());
  if (train.size() < 2) throw ConfigInvalid("correlation training needs at least 2 training videos (BatchTooSmall)");

  Rng root(config.seed);
  Rng label_rng = root.fork(21);
  Rng shuffle_rng = root.fork(31);
  if (config.shuffle_labels) shuffle_labels(train, label_rng.next_u64());

  ModelSet models = make_models(config);
  const bool frozen = models.extractor.frozen();
  Adam<float> optimizer(frozen ? models.head.parameters() : models.parameters(), Adam<float>::Options{config.lr});

  std::vector<Tensor<float>> train_desc, val_desc;
  auto refresh_descriptors = [&] {
    train_desc = extract_descriptors(models.extractor, train, config.descriptor_mode, config.extractor_threads);
    val_desc = extract_descriptors(models.extractor, val, config.descriptor_mode, config.extractor_threads);
  };
  refresh_descriptors();
  const Eigen::MatrixXd train_targets = label_matrix(train);
  const Eigen::MatrixXd val_targets = label_matrix(val);

  fs::create_directories(config.out_dir);
  TrainSummary summary;
  summary.report = fs::path(config.out_dir) / "train_report.csv";
  summary.best_checkpoint = fs::path(config.out_dir) / "best.ckpt";
  summary.final_checkpoint = fs::path(config.out_dir) / "final.ckpt";
  bool have_best = false;

  const Index step_cap = config.steps > 0 ? config.steps : std::numeric_limits<Index>::max();
  for (Index epoch = 1; summary.steps < step_cap && (config.steps > 0 || epoch <= config.epochs); ++epoch) {
    const auto batches = make_batches(train.size(), config.batch_size, shuffle_rng.next_u64(), true);
    double loss_sum = 0.0;
    Index loss_count = 0;
    for (const auto& order : batches) {
      if (summary.steps >= step_cap) break;
      double loss = 0.0;
      if (frozen) {
        Batch batch = assemble_batch(train_desc, train, order);
        loss = eri_train_step(models.head, batch.descriptors, batch.lengths, batch.labels, config.loss, optimizer);
      } else {
        std::vector<Tensor<float>> frames;
        for (std::size_t i : order) frames.push_back(train[i].frames);
        Batch labels = assemble_batch(train_desc, train, order);
        loss = eri_train_step(models.extractor, models.head, frames, labels.labels, config.loss, optimizer,
                              config.descriptor_mode);
      }
      summary.step_losses.push_back(loss);
      loss_sum += loss;
      ++loss_count;
      ++summary.steps;
    }
    if (!frozen) refresh_descriptors();

    EpochRow row;
    row.epoch = epoch;
    row.steps = summary.steps;
    row.train_loss = loss_sum / static_cast<double>(std::max<Index>(loss_count, 1));
    row.train_mean_pcc = mean_pcc_of(predict(models.head, train_desc), train_targets);
    if (val.size() >= 2) row.val_mean_pcc = mean_pcc_of(predict(models.head, val_desc), val_targets);
    const double score = row.val_mean_pcc.value_or(row.train_mean_pcc);
    if (!have_best || score > summary.best_score) {
      have_best = true;
      summary.best_score = score;
      summary.best_epoch = epoch;
      checkpoint_save(models, summary.best_checkpoint);
    }
    summary.epochs.push_back(row);
  }
  checkpoint_save(models, summary.final_checkpoint);

  std::ostringstream report;
  report << report_preamble(config, sha256_hex(manifest_bytes));
  report << "epoch,steps,train_loss,train_mean_pcc,val_mean_pcc\n";
  for (const auto& row : summary.epochs)
    report << row.epoch << ',' << row.steps << ',' << fmt(row.train_loss) << ',' << fmt(row.train_mean_pcc) << ','
           << (row.val_mean_pcc ? fmt(*row.val_mean_pcc) : std::string()) << '\n';
  io::write_file(summary.report.string(), report.str());

  const EpochRow& last = summary.epochs.back();
  out << "trained " << summary.steps << " steps over " << summary.epochs.size() << " epochs; final train mean PCC "
      << fmt(last.train_mean_pcc);
  if (last.val_mean_pcc) out << ", val mean PCC " << fmt(*last.val_mean_pcc);
  out << "\nbest epoch " << summary.best_epoch << " (" << (val.size() >= 2 ? "val" : "train") << " mean PCC "
      << fmt(summary.best_score) << ") -> " << summary.best_checkpoint.string() << '\n';
  return summary;
}

namespace {

Eigen::MatrixXd read_predictions(const fs::path& path, const std::vector<SequenceSample>& samples, LabelNorm norm) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file " + path.string());
  std::string line;
  std::getline(in, line);
  std::string expected = "video_id";
  for (auto name : kCategoryNames) expected += "," + std::string(name);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) throw IoError("predictions header must be '" + expected + "'");
  std::map<std::string, ReactionVector> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, cell;
    std::getline(fields, id, ',');
    ReactionVector v{};
    for (std::size_t k = 0; k < kCategories; ++k) {
      if (!std::getline(fields, cell, ',')) throw IoError("predictions row for " + id + " has too few columns");
      v[k] = std::stod(cell);
    }
    rows[id] = normalize_label(v, norm);
  }
  if (rows.size() != samples.size())
    throw RowCountMismatch(std::to_string(rows.size()) + " prediction rows vs " + std::to_string(samples.size()) +
                           " split rows");
  Eigen::MatrixXd out(static_cast<Index>(samples.size()), kCategories);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = rows.find(samples[i].video_id);
    if (it == rows.end()) throw RowCountMismatch("no prediction for " + samples[i].video_id);
    for (Index k = 0; k < kCategories; ++k) out(static_cast<Index>(i), k) = it->second[static_cast<std::size_t>(k)];
  }
  return out;
}

}  // namespace

EvalSummary cmd_eval(const RunConfig& config, std::ostream& out) {
  EvalSummary summary;
  summary.split = parse_split(config.split);
  const fs::path data_dir = config.data_dir;
  const std::string manifest_bytes = read_manifest_bytes(data_dir);
  const Manifest manifest = read_manifest(data_dir / "manifest.csv");

  RunConfig effective = config;
  std::optional<ModelSet> models;
  if (config.predictions.empty()) {
    if (config.checkpoint.empty()) throw ConfigInvalid("eval needs --checkpoint or --predictions");
    models.emplace(checkpoint_load(config.checkpoint));
    effective = models->config;
    effective.data_dir = config.data_dir;
    effective.split = config.split;
    effective.checkpoint = config.checkpoint;
    effective.report = config.report;
  }

  std::vector<SequenceSample> samples =
      load_split(manifest, data_dir, summary.split, effective.label_norm, config.workers);
  if (samples.empty()) throw SplitEmpty("split '" + config.split + "' has no rows");

  Eigen::MatrixXd preds;
  if (models) {
    auto descriptors = extract_descriptors(models->extractor, samples, effective.descriptor_mode, config.extractor_threads);
    preds = predict(models->head, descriptors);
  } else {
    preds = read_predictions(config.predictions, samples, effective.label_norm);
  }
  summary.report = evaluate_mean_pcc(preds, label_matrix(samples));

  summary.csv = config.report.empty() ? fs::path(config.out_dir) / ("eval_" + config.split + ".csv") : fs::path(config.report);
  if (summary.csv.has_parent_path()) fs::create_directories(summary.csv.parent_path());
  std::ostringstream csv;
  csv << report_preamble(effective, sha256_hex(manifest_bytes));
  csv << "split,n_samples";
  for (auto name : kCategoryNames) csv << ',' << name;
  csv << ",mean_pcc,degenerate\n";
  csv << config.split << ',' << summary.report.n_samples;
  for (double v : summary.report.per_category) csv << ',' << fmt(v);
  csv << ',' << fmt(summary.report.mean_pcc) << ',';
  for (std::size_t i = 0; i < summary.report.degenerate_categories.size(); ++i)
    csv << (i ? ";" : "") << kCategoryNames[static_cast<std::size_t>(summary.report.degenerate_categories[i])];
  csv << '\n';
  io::write_file(summary.csv.string(), csv.str());

  out << "split " << config.split << ", " << summary.report.n_samples << " videos\n";
  for (Index k = 0; k < kCategories; ++k) {
    out << "  " << kCategoryNames[static_cast<std::size_t>(k)] << ": " << fmt(summary.report.per_category[static_cast<std::size_t>(k)]);
    for (int d : summary.report.degenerate_categories)
      if (d == k) out << " (degenerate)";
    out << '\n';
  }
  out << "mean PCC " << fmt(summary.report.mean_pcc) << '\n';
  return summary;
}

}  // namespace eri
