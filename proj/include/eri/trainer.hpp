#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eri/checkpoint.hpp"

namespace eri {

/// Detached [T_b,22] descriptor sequences, one per sample, in sample order.
/// With threads > 1 samples are spread over workers; each sample's pass is
/// identical to the single-threaded one.
std::vector<Tensor<float>> extract_descriptors(MtlDan<float>& extractor, const std::vector<SequenceSample>& samples,
                                               DescriptorMode mode, int threads = 1);

/// Head outputs [N,7] for cached descriptors, evaluated in chunks.
Eigen::MatrixXd predict(const EriHead<float>& head, const std::vector<Tensor<float>>& descriptors);

/// Normalized labels [N,7].
Eigen::MatrixXd label_matrix(const std::vector<SequenceSample>& samples);

struct EpochRow {
  Index epoch = 0;
  Index steps = 0;  // cumulative optimizer steps
  double train_loss = 0.0;
  double train_mean_pcc = 0.0;
  std::optional<double> val_mean_pcc;
};

struct TrainSummary {
  std::vector<EpochRow> epochs;
  std::vector<double> step_losses;
  Index steps = 0;
  Index best_epoch = 0;
  double best_score = 0.0;
  std::filesystem::path report;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
};

struct EvalSummary {
  Split split = Split::Val;
  CorrelationReport report;
  std::filesystem::path csv;
};

/// Header lines shared by every report: the config, one `# key=value` per
/// line, and the manifest's SHA-256.
std::string report_preamble(const RunConfig& config, const std::string& manifest_sha256);

SyntheticDataset cmd_synth(const RunConfig& config, std::ostream& out);

/// Writes <out_dir>/train_report.csv, best.ckpt and final.ckpt.
TrainSummary cmd_train(const RunConfig& config, std::ostream& out);

/// Scores a checkpoint, or a predictions CSV (video_id plus the seven
/// categories) when `config.predictions` is set, against one manifest split.
EvalSummary cmd_eval(const RunConfig& config, std::ostream& out);

}  // namespace eri
