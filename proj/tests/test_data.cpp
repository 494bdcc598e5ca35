#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "../src/binary_io.hpp"
#include "eri/data.hpp"
#include "eri/hash.hpp"
#include "test_util.hpp"

using namespace eri;
namespace fs = std::filesystem;

namespace {

std::string hash_tree(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, root).string() + ":" + sha256_hex(io::read_file(f.string())) + "\n";
  return sha256_hex(all);
}

}  // namespace

TEST(Sampler, CountIsCeilOfThirtiethExhaustively) {
  for (Index n = 1; n <= 10000; ++n) {
    auto idx = sample_frame_indices(n);
    ASSERT_EQ(static_cast<Index>(idx.size()), (n + 29) / 30) << n;
    ASSERT_EQ(idx.front(), 0);
    ASSERT_LT(idx.back(), n);
    ASSERT_EQ(idx.back(), 30 * (static_cast<Index>(idx.size()) - 1));
  }
}

TEST(Sampler, NamedCases) {
  auto ten = sample_frame_indices(300);
  EXPECT_EQ(ten.size(), 10u);
  EXPECT_EQ(ten.back(), 270);
  EXPECT_EQ(sample_frame_indices(29), std::vector<Index>{0});
  auto twelve = sample_frame_indices(349);
  EXPECT_EQ(twelve.size(), 12u);
  EXPECT_EQ(twelve.back(), 330);
  EXPECT_THROW(sample_frame_indices(0), EmptyVideo);
}

TEST(Labels, EndpointsMidpointAndRoundTrip) {
  ReactionVector raw{1, 100, 50.5, 1, 100, 50.5, 25};
  auto n = normalize_label(raw);
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[1], 1.0);
  EXPECT_EQ(n[2], 0.5);
  EXPECT_EQ(normalize_label(raw, LabelNorm::Over100)[1], 1.0);
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    ReactionVector v{};
    for (double& x : v) x = rng.uniform(1, 100);
    for (LabelNorm norm : {LabelNorm::MinusOneOver99, LabelNorm::Over100}) {
      auto back = denormalize_label(normalize_label(v, norm), norm);
      for (std::size_t k = 0; k < kCategories; ++k) EXPECT_NEAR(back[k], v[k], 1e-6);
    }
    ReactionVector w = v;
    w[3] = std::min(100.0, v[3] + 1.0);
    EXPECT_LE(normalize_label(v)[3], normalize_label(w)[3]);
  }
  raw[4] = 100.5;
  EXPECT_THROW(normalize_label(raw), LabelOutOfRange);
}

TEST(Manifest, RoundTripsAndValidates) {
  auto dir = test::scratch_dir("manifest");
  Manifest m;
  m.rows.push_back({"a", "frames/a.ftz", 31, {1, 2, 3, 4, 5, 6, 7.25}, Split::Train});
  m.rows.push_back({"b", "frames/b.ftz", 600, {100, 99, 98, 97, 96, 95, 1}, Split::Val});
  write_manifest(m, dir / "manifest.csv");
  std::ifstream in(dir / "manifest.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, kManifestHeader);
  Manifest back = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].labels, m.rows[0].labels);
  EXPECT_EQ(back.rows[1].split, Split::Val);
  EXPECT_EQ(back.rows_in(Split::Train), std::vector<std::size_t>{0});

  m.rows[1].video_id = "a";
  EXPECT_THROW(m.validate(), ConfigInvalid);
  m.rows[1].video_id = "b";
  m.rows[1].labels[0] = 0.5;
  EXPECT_THROW(m.validate(), ConfigInvalid);
}

TEST(Frames, RoundTripAndRejectCorruption) {
  auto dir = test::scratch_dir("frames");
  Rng rng(2);
  auto frames = test::random_tensor<float>({2, 3, 4, 5}, rng);
  write_frames(dir / "x.ftz", frames);
  auto back = read_frames(dir / "x.ftz");
  EXPECT_EQ(back.shape(), frames.shape());
  EXPECT_EQ(back.data(), frames.data());
  std::string bytes = io::read_file((dir / "x.ftz").string());
  EXPECT_EQ(bytes.substr(0, 4), "FTZ1");
  EXPECT_EQ(bytes.size(), 4 + 16 + 4u * 120);
  io::write_file((dir / "short.ftz").string(), bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(read_frames(dir / "short.ftz"), IoError);
  bytes[0] = 'X';
  io::write_file((dir / "bad.ftz").string(), bytes);
  EXPECT_THROW(read_frames(dir / "bad.ftz"), IoError);
}

TEST(Synthetic, DeterministicGivenSeed) {
  auto a = test::scratch_dir("synth_a"), b = test::scratch_dir("synth_b"), c = test::scratch_dir("synth_c");
  SynthConfig cfg;
  cfg.n_videos = 12;
  generate_synthetic(cfg, a);
  generate_synthetic(cfg, b);
  EXPECT_EQ(hash_tree(a), hash_tree(b));
  cfg.seed = 8;
  generate_synthetic(cfg, c);
  EXPECT_NE(hash_tree(a), hash_tree(c));
}

TEST(Synthetic, LabelsReconstructFromPatternStatistics) {
  auto dir = test::scratch_dir("synth_inverse");
  SynthConfig cfg;
  cfg.n_videos = 20;
  auto ds = generate_synthetic(cfg, dir);
  Manifest m = read_manifest(dir / "manifest.csv");
  const ReactionVector unused_noise{9, 9, 9, 9, 9, 9, 9};
  for (const auto& row : m.rows) {
    auto frames = read_frames(dir / row.frame_file);
    EXPECT_EQ(frames.dim(0), static_cast<Index>(sample_frame_indices(row.n_frames).size()));
    auto rebuilt = planted_label(pattern_statistics(frames), ds.mixing, 1.0, unused_noise);
    for (std::size_t k = 0; k < kCategories; ++k) EXPECT_EQ(rebuilt[k], row.labels[k]) << row.video_id;
  }
  for (const auto& mix_row : ds.mixing) {
    double l1 = 0;
    for (double v : mix_row) l1 += std::abs(v);
    EXPECT_NEAR(l1, 1.0, 1e-12);
  }
}

TEST(Synthetic, ZeroSignalLabelsIgnorePatterns) {
  PatternStats a{0.5, -0.2, 0.1}, b{-0.7, 0.3, 0.6};
  const MixingMatrix mixing = synthetic_mixing(7);
  ReactionVector noise{0.1, -0.2, 0.3, 0, 0.5, -0.6, 0.2};
  EXPECT_EQ(planted_label(a, mixing, 0.0, noise), planted_label(b, mixing, 0.0, noise));
  EXPECT_NE(planted_label(a, mixing, 1.0, noise), planted_label(b, mixing, 1.0, noise));
}

TEST(Synthetic, SplitsLengthsAndMetadata) {
  auto dir = test::scratch_dir("synth_meta");
  SynthConfig cfg;
  cfg.n_videos = 200;
  cfg.height = cfg.width = 4;
  auto ds = generate_synthetic(cfg, dir);
  double total = 0;
  for (std::size_t i = 0; i < ds.manifest.rows.size(); ++i) {
    const auto& row = ds.manifest.rows[i];
    EXPECT_EQ(row.split, i % 5 == 4 ? Split::Val : Split::Train);
    EXPECT_GE(row.n_frames, 30);
    EXPECT_LE(row.n_frames, 600);
    total += static_cast<double>(sample_frame_indices(row.n_frames).size());
  }
  const double mean_t = total / 200.0;
  EXPECT_GE(mean_t, 8.0);
  EXPECT_LE(mean_t, 15.0);
  const std::string meta = io::read_file((dir / "synth_meta.txt").string());
  EXPECT_NE(meta.find("frame_dims=3,4,4"), std::string::npos);
}

TEST(Synthetic, RejectsInvalidConfig) {
  SynthConfig cfg;
  cfg.n_videos = 1;
  EXPECT_THROW(cfg.validate(), ConfigInvalid);
  cfg.n_videos = 4;
  cfg.signal_strength = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigInvalid);
}

TEST(LoadSplit, OrderIndependentOfWorkerCount) {
  auto dir = test::scratch_dir("load_split");
  SynthConfig cfg;
  cfg.n_videos = 15;
  generate_synthetic(cfg, dir);
  Manifest m = read_manifest(dir / "manifest.csv");
  auto one = load_split(m, dir, Split::Train, LabelNorm::MinusOneOver99, 1);
  auto four = load_split(m, dir, Split::Train, LabelNorm::MinusOneOver99, 4);
  ASSERT_EQ(one.size(), 12u);
  ASSERT_EQ(four.size(), 12u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].video_id, four[i].video_id);
    EXPECT_EQ(one[i].frames.data(), four[i].frames.data());
    EXPECT_EQ(one[i].norm_label, normalize_label(one[i].raw_label));
  }
  EXPECT_TRUE(load_split(m, dir, Split::Test, LabelNorm::MinusOneOver99).empty());
}

TEST(Batches, SizesOrderAndPartition) {
  auto b = make_batches(10, 4, std::nullopt);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(b[2].size(), 2u);

  auto shuffled = make_batches(50, 8, 11);
  EXPECT_EQ(shuffled, make_batches(50, 8, 11));
  EXPECT_NE(shuffled, make_batches(50, 8, 12));
  std::multiset<std::size_t> seen;
  for (const auto& batch : shuffled) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 50u);
}

TEST(Batches, CorrelationTrainingMergesSingleton) {
  auto b = make_batches(9, 4, std::nullopt, true);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].size(), 5u);
  EXPECT_THROW(make_batches(9, 1, std::nullopt, true), BatchTooSmall);
  EXPECT_NO_THROW(make_batches(9, 1, std::nullopt, false));
}

TEST(Batches, AssembleZeroPadsToLongest) {
  std::vector<SequenceSample> samples(2);
  samples[0].norm_label.fill(0.25);
  samples[1].norm_label.fill(0.75);
  std::vector<Tensor<float>> desc{Tensor<float>::ones({3, 22}), Tensor<float>::ones({1, 22})};
  Batch batch = assemble_batch(desc, samples, {1, 0});
  EXPECT_EQ(batch.descriptors.shape(), (Shape{2, 3, 22}));
  EXPECT_EQ(batch.lengths, (std::vector<Index>{1, 3}));
  EXPECT_EQ(batch.labels[0], 0.75f);
  EXPECT_EQ(batch.descriptors.data().head(66).sum(), 22.0f);
}
