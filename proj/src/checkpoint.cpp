#include "eri/checkpoint.hpp"

#include "binary_io.hpp"
#include "eri/hash.hpp"

namespace eri {

ParamList<float> ModelSet::parameters() const {
  ParamList<float> out = extractor.parameters();
  ParamList<float> h = head.parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

ModelSet make_models(const RunConfig& config) {
  config.validate();
  Rng root(config.seed);
  Rng extractor_rng = root.fork(11);
  Rng head_rng = root.fork(12);
  ModelSet m{config, MtlDan<float>(config.mtl_config(), extractor_rng), EriHead<float>(config.head_config(), head_rng)};
  m.extractor.set_frozen(config.freeze_extractor);
  return m;
}

std::string checkpoint_bytes(const ModelSet& models) {
  std::string out = "ERIC";
  io::put_u32(out, kCheckpointVersion);
  const std::string cfg = models.config.serialize();
  io::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const ParamList<float> params = models.parameters();
  io::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    io::put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (Index e : p.tensor.shape()) io::put_u32(out, static_cast<std::uint32_t>(e));
    out.push_back(static_cast<char>(p.buffer || !p.tensor.requires_grad() ? 1 : 0));
  }
  for (const auto& p : params)
    for (Index i = 0; i < p.tensor.size(); ++i) io::put_f32(out, p.tensor[i]);
  io::put_u32(out, crc32(out));
  return out;
}

void checkpoint_save(const ModelSet& models, const std::filesystem::path& path) {
  io::write_file(path.string(), checkpoint_bytes(models));
}

namespace {

struct Entry {
  std::string name;
  Shape shape;
  bool frozen = false;
};

struct Parsed {
  std::string config;
  std::vector<Entry> entries;
  std::size_t payload_offset = 0;
};

Parsed parse(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "ERIC") != 0) throw IoError("not a checkpoint file");
  io::Reader tail(std::string_view(bytes).substr(bytes.size() - 4));
  const std::uint32_t stored = tail.u32();
  if (crc32(std::string_view(bytes).substr(0, bytes.size() - 4)) != stored)
    throw ChecksumFailure("checkpoint CRC32 does not match its contents");
  io::Reader r(std::string_view(bytes).substr(0, bytes.size() - 4));
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw VersionUnsupported("checkpoint format version " + std::to_string(version));
  Parsed p;
  p.config = std::string(r.bytes(r.u32()));
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Entry e;
    e.name = std::string(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(static_cast<Index>(r.u32()));
    e.frozen = r.u8() != 0;
    p.entries.push_back(std::move(e));
  }
  p.payload_offset = r.position();
  return p;
}

void restore(const std::string& bytes, const Parsed& parsed, ModelSet& models) {
  ParamList<float> params = models.parameters();
  const std::size_t common = std::min(params.size(), parsed.entries.size());
  for (std::size_t i = 0; i < common; ++i) {
    const Entry& e = parsed.entries[i];
    if (e.name != params[i].name || e.shape != params[i].tensor.shape())
      throw NameTableMismatch("entry " + std::to_string(i) + ": checkpoint has '" + e.name + "' " + to_string(e.shape) +
                              ", model expects '" + params[i].name + "' " + to_string(params[i].tensor.shape()));
  }
  if (params.size() != parsed.entries.size()) {
    const std::string first = params.size() > common ? params[common].name : parsed.entries[common].name;
    throw NameTableMismatch("entry count differs (checkpoint " + std::to_string(parsed.entries.size()) + ", model " +
                            std::to_string(params.size()) + "); first unmatched '" + first + "'");
  }
  io::Reader r(std::string_view(bytes).substr(parsed.payload_offset, bytes.size() - 4 - parsed.payload_offset));
  for (auto& p : params) {
    Vec<float>& data = p.tensor.mutable_data();
    for (Index i = 0; i < data.size(); ++i) data[i] = r.f32();
  }
  if (r.remaining() != 0) throw IoError("trailing bytes after checkpoint payload");

  bool extractor_frozen = true;
  const std::size_t n_extractor = models.extractor.parameters().size();
  for (std::size_t i = 0; i < n_extractor; ++i)
    if (!params[i].buffer && !parsed.entries[i].frozen) extractor_frozen = false;
  models.extractor.set_frozen(extractor_frozen);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i].buffer) params[i].tensor.set_requires_grad(!parsed.entries[i].frozen);
}

}  // namespace

ModelSet checkpoint_from_bytes(const std::string& bytes) {
  Parsed parsed = parse(bytes);
  RunConfig config = parse_run_config(parsed.config);
  ModelSet models = make_models(config);
  restore(bytes, parsed, models);
  return models;
}

ModelSet checkpoint_load(const std::filesystem::path& path) { return checkpoint_from_bytes(io::read_file(path.string())); }

void checkpoint_load_into(const std::filesystem::path& path, ModelSet& models) {
  const std::string bytes = io::read_file(path.string());
  Parsed parsed = parse(bytes);
  restore(bytes, parsed, models);
  models.config = parse_run_config(parsed.config);
}

}  // namespace eri
