#include "eri/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"

namespace eri {

namespace fs = std::filesystem;

std::vector<Index> sample_frame_indices(Index n_total_frames) {
  if (n_total_frames < 1) throw EmptyVideo("video has " + std::to_string(n_total_frames) + " frames");
  std::vector<Index> out;
  for (Index i = 0; i < n_total_frames; i += kFrameStride) out.push_back(i);
  return out;
}

const char* to_string(LabelNorm norm) { return norm == LabelNorm::MinusOneOver99 ? "minus1-over-99" : "over-100"; }

LabelNorm parse_label_norm(const std::string& s) {
  if (s == "minus1-over-99") return LabelNorm::MinusOneOver99;
  if (s == "over-100") return LabelNorm::Over100;
  throw ConfigInvalid("label_norm must be minus1-over-99 or over-100, got '" + s + "'");
}

ReactionVector normalize_label(const ReactionVector& raw, LabelNorm norm) {
  ReactionVector out{};
  for (std::size_t k = 0; k < raw.size(); ++k) {
    if (!(raw[k] >= 1.0 && raw[k] <= 100.0))
      throw LabelOutOfRange(std::string(kCategoryNames[k]) + " intensity " + std::to_string(raw[k]) + " outside [1,100]");
    out[k] = norm == LabelNorm::MinusOneOver99 ? (raw[k] - 1.0) / 99.0 : raw[k] / 100.0;
  }
  return out;
}

ReactionVector denormalize_label(const ReactionVector& normalized, LabelNorm norm) {
  ReactionVector out{};
  for (std::size_t k = 0; k < normalized.size(); ++k)
    out[k] = norm == LabelNorm::MinusOneOver99 ? normalized[k] * 99.0 + 1.0 : normalized[k] * 100.0;
  return out;
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigInvalid("split must be train, val or test, got '" + s + "'");
}

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& row : rows) {
    if (row.video_id.empty() || row.video_id.find_first_of(",\n\r") != std::string::npos)
      throw ConfigInvalid("invalid video id '" + row.video_id + "'");
    if (!ids.insert(row.video_id).second) throw ConfigInvalid("duplicate video id '" + row.video_id + "'");
    if (row.n_frames < 1) throw ConfigInvalid(row.video_id + ": n_frames must be >= 1");
    for (double v : row.labels)
      if (!(v >= 1.0 && v <= 100.0)) throw ConfigInvalid(row.video_id + ": label outside [1,100]");
  }
}

std::vector<std::size_t> Manifest::rows_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].split == split) out.push_back(i);
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigInvalid("bad number '" + s + "' for " + what);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigInvalid("empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw ConfigInvalid("unexpected manifest header: " + line);
  Manifest m;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 11) throw ConfigInvalid("manifest line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
    ManifestRow row;
    row.video_id = f[0];
    row.frame_file = f[1];
    row.n_frames = static_cast<Index>(parse_double(f[2], "n_frames"));
    for (std::size_t k = 0; k < kCategories; ++k) row.labels[k] = parse_double(f[3 + k], std::string(kCategoryNames[k]));
    row.split = parse_split(f[10]);
    m.rows.push_back(std::move(row));
  }
  m.validate();
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  manifest.validate();
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& row : manifest.rows) {
    out << row.video_id << ',' << row.frame_file << ',' << row.n_frames;
    for (double v : row.labels) out << ',' << format_double(v);
    out << ',' << to_string(row.split) << '\n';
  }
  io::write_file(path.string(), out.str());
}

void write_frames(const fs::path& path, const Tensor<float>& frames) {
  if (frames.rank() != 4) throw ShapeMismatch("frame stack must be [T,C,H,W], got " + to_string(frames.shape()));
  std::string bytes = "FTZ1";
  for (Index e : frames.shape()) io::put_u32(bytes, static_cast<std::uint32_t>(e));
  bytes.reserve(bytes.size() + 4 * static_cast<std::size_t>(frames.size()));
  for (Index i = 0; i < frames.size(); ++i) io::put_f32(bytes, frames[i]);
  io::write_file(path.string(), bytes);
}

Tensor<float> read_frames(const fs::path& path) {
  std::string bytes = io::read_file(path.string());
  io::Reader r(bytes);
  if (r.bytes(4) != "FTZ1") throw IoError(path.string() + ": not an FTZ1 frame file");
  Shape shape;
  for (int i = 0; i < 4; ++i) shape.push_back(static_cast<Index>(r.u32()));
  const Index n = numel(shape);
  if (r.remaining() != static_cast<std::size_t>(n) * 4)
    throw IoError(path.string() + ": payload size does not match " + to_string(shape));
  Vec<float> data(n);
  for (Index i = 0; i < n; ++i) data[i] = r.f32();
  return Tensor<float>(std::move(shape), std::move(data));
}

void SynthConfig::validate() const {
  if (n_videos < 2) throw ConfigInvalid("n_videos must be >= 2 (correlation needs two samples), got " + std::to_string(n_videos));
  if (channels < 1 || height < 2 || width < 2) throw ConfigInvalid("frame dims must be at least 1x2x2");
  if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) throw ConfigInvalid("signal_strength must lie in [0,1]");
  if (min_frames < 1 || max_frames < min_frames) throw ConfigInvalid("frame count range is empty");
}

PatternStats pattern_statistics(const Tensor<float>& frames) {
  if (frames.rank() != 4) throw ShapeMismatch("frame stack must be [T,C,H,W]");
  const Index T = frames.dim(0), H = frames.dim(2), W = frames.dim(3);
  const Index planes = T * frames.dim(1);
  double total = 0, left = 0, right = 0, top = 0, bottom = 0;
  const float* p = frames.data().data();
  for (Index i = 0; i < planes; ++i)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double v = *p++;
        total += v;
        (x < W / 2 ? left : right) += v;
        (y < H / 2 ? top : bottom) += v;
      }
  const double n = static_cast<double>(planes * H * W);
  const double n_left = static_cast<double>(planes * H * (W / 2)), n_right = n - n_left;
  const double n_top = static_cast<double>(planes * (H / 2) * W), n_bottom = n - n_top;
  PatternStats s{};
  s[0] = total / n;
  s[1] = 0.5 * (left / n_left - right / n_right);
  s[2] = 0.5 * (top / n_top - bottom / n_bottom);
  return s;
}

ReactionVector planted_label(const PatternStats& stats, const MixingMatrix& mixing, double signal_strength,
                             const ReactionVector& noise) {
  ReactionVector raw{};
  for (std::size_t k = 0; k < kCategories; ++k) {
    double signal = 0.0;
    for (std::size_t j = 0; j < kPatternStats; ++j) signal += mixing[k][j] * stats[j];
    double v = signal_strength * signal + (1.0 - signal_strength) * noise[k];
    raw[k] = std::clamp(50.5 + 49.5 * v, 1.0, 100.0);
  }
  return raw;
}

MixingMatrix synthetic_mixing(std::uint64_t seed) {
  Rng rng(seed ^ 0x5EEDF00Dull);
  MixingMatrix m{};
  for (auto& row : m) {
    double l1 = 0;
    for (double& v : row) {
      v = rng.uniform(-1.0, 1.0);
      l1 += std::abs(v);
    }
    for (double& v : row) v /= l1;
  }
  return m;
}

namespace {

constexpr double kLatentRange = 0.8;
constexpr double kNoiseAmplitude = 0.25;
constexpr Index kNoiseGrid = 5;
constexpr double kLabelNoise = 0.4;

/// Bilinearly upsampled coarse Gaussian grid: spatially smooth noise.
void add_smooth_noise(float* plane, Index H, Index W, Rng& rng) {
  double grid[kNoiseGrid][kNoiseGrid];
  for (auto& row : grid)
    for (double& v : row) v = rng.normal(0.0, kNoiseAmplitude);
  for (Index y = 0; y < H; ++y) {
    double gy = static_cast<double>(y) * (kNoiseGrid - 1) / static_cast<double>(H - 1);
    Index y0 = std::min<Index>(static_cast<Index>(gy), kNoiseGrid - 2);
    double fy = gy - static_cast<double>(y0);
    for (Index x = 0; x < W; ++x) {
      double gx = static_cast<double>(x) * (kNoiseGrid - 1) / static_cast<double>(W - 1);
      Index x0 = std::min<Index>(static_cast<Index>(gx), kNoiseGrid - 2);
      double fx = gx - static_cast<double>(x0);
      double v = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                 fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
      plane[y * W + x] += static_cast<float>(v);
    }
  }
}

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "frames");
  SyntheticDataset ds;
  ds.mixing = synthetic_mixing(config.seed);
  Rng root(config.seed);
  const Index C = config.channels, H = config.height, W = config.width;

  for (Index i = 0; i < config.n_videos; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i) + 1);
    ManifestRow row;
    std::ostringstream id;
    id << "vid_" << std::setw(4) << std::setfill('0') << i;
    row.video_id = id.str();
    row.frame_file = "frames/" + row.video_id + ".ftz";
    row.n_frames = rng.uniform_int(config.min_frames, config.max_frames);
    row.split = i % 5 == 4 ? Split::Val : Split::Train;
    const Index T = static_cast<Index>(sample_frame_indices(row.n_frames).size());

    const double brightness = rng.uniform(-kLatentRange, kLatentRange);
    const double contrast_h = rng.uniform(-kLatentRange, kLatentRange);
    const double contrast_v = rng.uniform(-kLatentRange, kLatentRange);

    Vec<float> data(T * C * H * W);
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c) {
        float* plane = data.data() + (t * C + c) * H * W;
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x)
            plane[y * W + x] = static_cast<float>(brightness + contrast_h * (x < W / 2 ? 1.0 : -1.0) +
                                                  contrast_v * (y < H / 2 ? 1.0 : -1.0));
        add_smooth_noise(plane, H, W, rng);
      }
    Tensor<float> frames({T, C, H, W}, std::move(data));
    write_frames(out_dir / row.frame_file, frames);

    ReactionVector noise{};
    for (double& v : noise) v = rng.normal(0.0, kLabelNoise);
    row.labels = planted_label(pattern_statistics(frames), ds.mixing, config.signal_strength, noise);
    ds.manifest.rows.push_back(std::move(row));
  }
  write_manifest(ds.manifest, out_dir / "manifest.csv");

  std::ostringstream meta;
  meta << "n_videos=" << config.n_videos << '\n'
       << "seed=" << config.seed << '\n'
       << "signal_strength=" << format_double(config.signal_strength) << '\n'
       << "frame_dims=" << C << ',' << H << ',' << W << '\n'
       << "frame_stride=" << kFrameStride << '\n'
       << "frame_count_range=" << config.min_frames << ',' << config.max_frames << '\n';
  for (std::size_t k = 0; k < kCategories; ++k) {
    meta << "mixing." << kCategoryNames[k] << '=';
    for (std::size_t j = 0; j < kPatternStats; ++j) meta << (j ? "," : "") << format_double(ds.mixing[k][j]);
    meta << '\n';
  }
  io::write_file((out_dir / "synth_meta.txt").string(), meta.str());
  return ds;
}

std::vector<SequenceSample> load_split(const Manifest& manifest, const fs::path& root, Split split, LabelNorm norm,
                                       int workers) {
  const std::vector<std::size_t> rows = manifest.rows_in(split);
  std::vector<SequenceSample> out(rows.size());
  auto load_one = [&](std::size_t i) {
    const ManifestRow& row = manifest.rows[rows[i]];
    SequenceSample s;
    s.video_id = row.video_id;
    s.frames = read_frames(root / row.frame_file);
    s.length = s.frames.dim(0);
    const Index expected = static_cast<Index>(sample_frame_indices(row.n_frames).size());
    if (s.length != expected)
      throw IoError(row.video_id + ": frame file holds " + std::to_string(s.length) + " frames, expected " +
                    std::to_string(expected));
    s.raw_label = row.labels;
    s.norm_label = normalize_label(row.labels, norm);
    out[i] = std::move(s);
  };
  if (workers <= 1 || rows.size() < 2) {
    for (std::size_t i = 0; i < rows.size(); ++i) load_one(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < rows.size(); i += static_cast<std::size_t>(workers)) load_one(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, Index batch_size,
                                                   std::optional<std::uint64_t> shuffle_seed,
                                                   bool correlation_training) {
  if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
  if (correlation_training && batch_size < 2)
    throw BatchTooSmall("correlation training needs batch_size >= 2, got " + std::to_string(batch_size));
  if (correlation_training && n == 1) throw BatchTooSmall("correlation training needs at least 2 samples");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    for (std::size_t i = n; i > 1; --i) {
      auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += bs)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
  if (correlation_training && batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

Batch assemble_batch(const std::vector<Tensor<float>>& descriptors, const std::vector<SequenceSample>& samples,
                     const std::vector<std::size_t>& order) {
  Batch batch;
  batch.order = order;
  std::vector<Tensor<float>> seqs;
  Vec<float> labels(static_cast<Index>(order.size()) * kCategories);
  for (std::size_t b = 0; b < order.size(); ++b) {
    seqs.push_back(descriptors[order[b]]);
    batch.lengths.push_back(descriptors[order[b]].dim(0));
    for (std::size_t k = 0; k < kCategories; ++k)
      labels[static_cast<Index>(b) * kCategories + static_cast<Index>(k)] = static_cast<float>(samples[order[b]].norm_label[k]);
  }
  batch.descriptors = pad_and_stack(seqs);
  batch.labels = Tensor<float>({static_cast<Index>(order.size()), kCategories}, std::move(labels));
  return batch;
}

}  // namespace eri
