#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "eri/data.hpp"

namespace eri {

/// Every knob of the command-line tool. Keys use snake_case; the CLI accepts
/// the same names with dashes. Serialized verbatim into checkpoints and
/// reports.
struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string out_dir = "runs/latest";
  std::string checkpoint;
  std::string split = "val";
  std::string report;
  std::string predictions;

  // synthetic data
  Index n_videos = 64;
  double signal_strength = 1.0;

  // model
  BackboneConfig backbone;
  Index attention_heads = 4;
  Index attention_reduction = 4;
  Index lstm_hidden = 64;
  Index lstm_layers = 1;
  DescriptorMode descriptor_mode = DescriptorMode::Activated;

  // training
  LossKind loss = LossKind::Pcc;
  double lr = 1e-3;
  Index batch_size = 32;
  Index epochs = 100;
  Index steps = 0;  // > 0: stop after this many optimizer steps
  std::uint64_t seed = 7;
  bool freeze_extractor = true;
  bool shuffle_labels = false;  // control run: labels permuted across training videos
  LabelNorm label_norm = LabelNorm::MinusOneOver99;
  int workers = 1;
  int extractor_threads = 1;

  // gradcheck
  std::string scope = "ops";

  /// Assigns one key; dashes in `key` are read as underscores.
  void set(std::string key, const std::string& value);
  /// Applies `key=value` lines; blank lines and `#` comments are skipped.
  void apply(std::string_view text);
  void apply_file(const std::string& path);
  /// All keys in a fixed order, one `key=value` per line.
  std::string serialize() const;
  void validate() const;

  MtlDanConfig mtl_config() const;
  EriHeadConfig head_config() const;
  SynthConfig synth_config() const;
};

RunConfig parse_run_config(std::string_view text);

}  // namespace eri
