#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eri/eri_head.hpp"

namespace eri {

/// One frame is kept from every window of this many frames.
inline constexpr Index kFrameStride = 30;

/// Indices {0, 30, 60, ...} below n_total_frames; ceil(n/30) of them.
std::vector<Index> sample_frame_indices(Index n_total_frames);

using ReactionVector = std::array<double, kCategories>;

enum class LabelNorm { MinusOneOver99, Over100 };

const char* to_string(LabelNorm norm);
LabelNorm parse_label_norm(const std::string& s);

/// Maps raw intensities in [1,100] to [0,1]: (v-1)/99, or v/100.
ReactionVector normalize_label(const ReactionVector& raw, LabelNorm norm = LabelNorm::MinusOneOver99);
ReactionVector denormalize_label(const ReactionVector& normalized, LabelNorm norm = LabelNorm::MinusOneOver99);

enum class Split { Train, Val, Test };

const char* to_string(Split split);
Split parse_split(const std::string& s);

struct ManifestRow {
  std::string video_id;
  std::string frame_file;  // relative to the manifest's directory
  Index n_frames = 0;
  ReactionVector labels{};  // raw, [1,100]
  Split split = Split::Train;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  /// Throws ConfigInvalid on duplicate ids, labels outside [1,100] or
  /// n_frames < 1.
  void validate() const;
  std::vector<std::size_t> rows_in(Split split) const;
};

inline constexpr const char* kManifestHeader =
    "video_id,frame_file,n_frames,adoration,amusement,anxiety,disgust,empathic_pain,fear,surprise,split";

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// FTZ1 frame stack: magic, T,C,H,W as u32 LE, then T*C*H*W f32 LE.
void write_frames(const std::filesystem::path& path, const Tensor<float>& frames);
Tensor<float> read_frames(const std::filesystem::path& path);

struct SynthConfig {
  Index n_videos = 64;
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  std::uint64_t seed = 7;
  double signal_strength = 1.0;
  Index min_frames = 30;
  Index max_frames = 600;

  void validate() const;
};

inline constexpr Index kPatternStats = 3;
using PatternStats = std::array<double, kPatternStats>;
using MixingMatrix = std::array<std::array<double, kPatternStats>, kCategories>;

/// Per-video statistics that drive the planted labels: mean brightness over
/// all channels, left-minus-right contrast and top-minus-bottom contrast (both
/// halved). Measured from the stored frames.
PatternStats pattern_statistics(const Tensor<float>& frames);

/// Raw label for given statistics; `noise` is the per-category noise draw.
ReactionVector planted_label(const PatternStats& stats, const MixingMatrix& mixing, double signal_strength,
                             const ReactionVector& noise);

struct SyntheticDataset {
  Manifest manifest;
  MixingMatrix mixing{};
};

/// Writes manifest.csv, frames/<id>.ftz and synth_meta.txt under out_dir.
/// Every 5th video (index % 5 == 4) is assigned to the validation split.
SyntheticDataset generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

/// Mixing matrix used by the generator for a given seed.
MixingMatrix synthetic_mixing(std::uint64_t seed);

struct SequenceSample {
  std::string video_id;
  Tensor<float> frames;  // [T,C,H,W]
  Index length = 0;
  ReactionVector raw_label{};
  ReactionVector norm_label{};
};

/// Loads all rows of `split`, reading frame files on `workers` threads.
/// Output order follows the manifest regardless of worker count.
std::vector<SequenceSample> load_split(const Manifest& manifest, const std::filesystem::path& root, Split split,
                                       LabelNorm norm, int workers = 1);

/// Partitions [0, n) into consecutive batches, optionally shuffled by seed.
/// With `correlation_training`, batch_size must be >= 2 and a trailing
/// single-sample batch is merged into its predecessor.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, Index batch_size,
                                                   std::optional<std::uint64_t> shuffle_seed,
                                                   bool correlation_training = false);

/// A padded head batch assembled from per-sample descriptor sequences.
struct Batch {
  Tensor<float> descriptors;  // [B,T_max,22]
  std::vector<Index> lengths;
  Tensor<float> labels;  // [B,7], normalized
  std::vector<std::size_t> order;  // sample indices in batch order
};

Batch assemble_batch(const std::vector<Tensor<float>>& descriptors, const std::vector<SequenceSample>& samples,
                     const std::vector<std::size_t>& order);

}  // namespace eri
