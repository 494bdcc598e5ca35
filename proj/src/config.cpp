#include "eri/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "binary_io.hpp"

namespace eri {

namespace {

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

Index to_index(const std::string& key, const std::string& v) {
  Index out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigInvalid(key + ": expected integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigInvalid(key + ": expected number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigInvalid(key + ": expected true/false, got '" + v + "'");
}

template <std::size_t N>
std::array<Index, N> to_list(const std::string& key, const std::string& v) {
  std::array<Index, N> out{};
  std::istringstream in(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(in, item, ',')) {
    if (i == N) throw ConfigInvalid(key + ": expected " + std::to_string(N) + " values");
    out[i++] = to_index(key, trim(item));
  }
  if (i != N) throw ConfigInvalid(key + ": expected " + std::to_string(N) + " values, got '" + v + "'");
  return out;
}

template <std::size_t N>
std::string join(const std::array<Index, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::set(std::string key, const std::string& raw) {
  std::replace(key.begin(), key.end(), '-', '_');
  const std::string v = trim(raw);
  if (key == "data_dir") data_dir = v;
  else if (key == "out_dir") out_dir = v;
  else if (key == "checkpoint") checkpoint = v;
  else if (key == "split") split = v;
  else if (key == "report") report = v;
  else if (key == "predictions") predictions = v;
  else if (key == "n_videos") n_videos = to_index(key, v);
  else if (key == "signal_strength") signal_strength = to_double(key, v);
  else if (key == "stage_channels") backbone.stage_channels = to_list<4>(key, v);
  else if (key == "blocks_per_stage") backbone.blocks_per_stage = to_list<4>(key, v);
  else if (key == "strides") backbone.strides = to_list<4>(key, v);
  else if (key == "frame_dims" || key == "input_size") {
    auto dims = to_list<3>(key, v);
    backbone.input_channels = dims[0];
    backbone.input_height = dims[1];
    backbone.input_width = dims[2];
  } else if (key == "attention_heads") attention_heads = to_index(key, v);
  else if (key == "attention_reduction") attention_reduction = to_index(key, v);
  else if (key == "lstm_hidden") lstm_hidden = to_index(key, v);
  else if (key == "lstm_layers") lstm_layers = to_index(key, v);
  else if (key == "descriptor_mode") {
    if (v == "activated") descriptor_mode = DescriptorMode::Activated;
    else if (v == "logits") descriptor_mode = DescriptorMode::Logits;
    else throw ConfigInvalid("descriptor_mode must be activated or logits, got '" + v + "'");
  } else if (key == "loss") loss = parse_loss_kind(v);
  else if (key == "lr") lr = to_double(key, v);
  else if (key == "batch_size") batch_size = to_index(key, v);
  else if (key == "epochs") epochs = to_index(key, v);
  else if (key == "steps") steps = to_index(key, v);
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_index(key, v));
  else if (key == "freeze_extractor") freeze_extractor = to_bool(key, v);
  else if (key == "shuffle_labels") shuffle_labels = to_bool(key, v);
  else if (key == "label_norm") label_norm = parse_label_norm(v);
  else if (key == "workers") workers = static_cast<int>(to_index(key, v));
  else if (key == "extractor_threads") extractor_threads = static_cast<int>(to_index(key, v));
  else if (key == "scope") scope = v;
  else throw ConfigInvalid("unknown config key '" + key + "'");
}

void RunConfig::apply(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigInvalid("config line " + std::to_string(line_no) + " lacks '='");
    set(trim(std::string_view(t).substr(0, eq)), t.substr(eq + 1));
  }
}

void RunConfig::apply_file(const std::string& path) { apply(io::read_file(path)); }

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "data_dir=" << data_dir << '\n'
      << "out_dir=" << out_dir << '\n'
      << "checkpoint=" << checkpoint << '\n'
      << "split=" << split << '\n'
      << "report=" << report << '\n'
      << "predictions=" << predictions << '\n'
      << "n_videos=" << n_videos << '\n'
      << "signal_strength=" << format_double(signal_strength) << '\n'
      << "frame_dims=" << backbone.input_channels << ',' << backbone.input_height << ',' << backbone.input_width << '\n'
      << "stage_channels=" << join(backbone.stage_channels) << '\n'
      << "blocks_per_stage=" << join(backbone.blocks_per_stage) << '\n'
      << "strides=" << join(backbone.strides) << '\n'
      << "attention_heads=" << attention_heads << '\n'
      << "attention_reduction=" << attention_reduction << '\n'
      << "lstm_hidden=" << lstm_hidden << '\n'
      << "lstm_layers=" << lstm_layers << '\n'
      << "descriptor_mode=" << (descriptor_mode == DescriptorMode::Activated ? "activated" : "logits") << '\n'
      << "loss=" << to_string(loss) << '\n'
      << "lr=" << format_double(lr) << '\n'
      << "batch_size=" << batch_size << '\n'
      << "epochs=" << epochs << '\n'
      << "steps=" << steps << '\n'
      << "seed=" << seed << '\n'
      << "freeze_extractor=" << (freeze_extractor ? "true" : "false") << '\n'
      << "shuffle_labels=" << (shuffle_labels ? "true" : "false") << '\n'
      << "label_norm=" << to_string(label_norm) << '\n'
      << "workers=" << workers << '\n'
      << "extractor_threads=" << extractor_threads << '\n'
      << "scope=" << scope << '\n';
  return out.str();
}

void RunConfig::validate() const {
  backbone.validate();
  if (batch_size < 2) throw ConfigInvalid("batch_size must be >= 2 for correlation losses (BatchTooSmall)");
  if (lr < 0) throw ConfigInvalid("lr must be >= 0");
  if (epochs < 1 && steps < 1) throw ConfigInvalid("need epochs >= 1 or steps >= 1");
  if (attention_heads < 1) throw ConfigInvalid("attention_heads must be >= 1");
  if (attention_reduction < 1 || backbone.feature_dim() % attention_reduction != 0)
    throw ConfigInvalid("attention_reduction must divide the feature channel count");
  if (lstm_hidden < 1 || lstm_layers < 1) throw ConfigInvalid("lstm_hidden and lstm_layers must be >= 1");
  if (workers < 1 || extractor_threads < 1) throw ConfigInvalid("thread counts must be >= 1");
}

MtlDanConfig RunConfig::mtl_config() const { return MtlDanConfig{backbone, attention_heads, attention_reduction}; }

EriHeadConfig RunConfig::head_config() const { return EriHeadConfig{lstm_hidden, lstm_layers}; }

SynthConfig RunConfig::synth_config() const {
  SynthConfig s;
  s.n_videos = n_videos;
  s.channels = backbone.input_channels;
  s.height = backbone.input_height;
  s.width = backbone.input_width;
  s.seed = seed;
  s.signal_strength = signal_strength;
  return s;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  c.apply(text);
  return c;
}

}  // namespace eri
