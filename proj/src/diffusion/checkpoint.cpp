#include "sketchdiff/diffusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sketchdiff/error.hpp"

namespace sketchdiff::diffusion {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'T', 'P', 'D', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(const std::vector<double>& v) {
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string file) : in_(in), file_(std::move(file)) {}
  template <typename T>
  T pod(const char* what) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) fail(what);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    if (n > (1u << 26)) fail(what);
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail(what);
    return s;
  }
  std::vector<double> doubles(std::uint64_t n, const char* what) {
    if (n > (std::uint64_t{1} << 32)) fail(what);
    std::vector<double> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in_) fail(what);
    return v;
  }
  [[noreturn]] void fail(const char* what) const {
    throw CheckpointError("checkpoint '" + file_ + "' is truncated or corrupt (reading " + what + ")");
  }

 private:
  std::istream& in_;
  std::string file_;
};

nn::TensorList as_list(const std::vector<StoredTensor>& stored) {
  nn::TensorList out;
  for (const auto& s : stored) out.push_back({s.name, nn::Tensor::from(s.shape, s.values), true});
  return out;
}

std::vector<StoredTensor> stored(const nn::TensorList& list) {
  std::vector<StoredTensor> out;
  for (const auto& t : list) out.push_back({t.name, t.tensor.shape(), t.tensor.values()});
  return out;
}

void restore(const Checkpoint& ckpt, const nn::TensorList& dst, const std::filesystem::path& path) {
  if (ckpt.tensors.size() != dst.size()) {
    throw CheckpointError("checkpoint '" + path.string() + "' holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model expects " + std::to_string(dst.size()));
  }
  try {
    nn::copy_values(as_list(ckpt.tensors), dst);
  } catch (const CheckpointError& e) {
    throw CheckpointError("checkpoint '" + path.string() + "': " + e.what());
  }
}

ModelConfig model_config(const Checkpoint& ckpt, const std::filesystem::path& path) {
  try {
    auto cfg = ModelConfig::from_kv(ckpt.config());
    if (cfg.steps != ckpt.steps || cfg.beta_start != ckpt.beta_start || cfg.beta_end != ckpt.beta_end) {
      throw ConfigError("schedule header disagrees with the config echo");
    }
    return cfg;
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint '" + path.string() + "': " + e.what());
  }
}

Checkpoint make(Stage stage, const ModelConfig& model, const TrainConfig& train, const nn::TensorList& tensors,
                const std::vector<double>& loss, KeyValues extra) {
  Checkpoint c;
  c.stage = stage;
  c.steps = model.steps;
  c.beta_start = model.beta_start;
  c.beta_end = model.beta_end;
  KeyValues kv = model.to_kv();
  kv.merge(train.to_kv());
  kv.merge(extra);
  c.config_echo = echo_config(kv);
  c.tensors = stored(tensors);
  c.loss_history = loss;
  return c;
}

}  // namespace

KeyValues Checkpoint::config() const {
  KeyValues kv;
  std::istringstream in(config_echo);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

std::string echo_config(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.pod(kCheckpointVersion);
  w.str(std::string(stage_name(ckpt.stage)));
  w.pod(ckpt.steps);
  w.pod(ckpt.beta_start);
  w.pod(ckpt.beta_end);
  w.str(ckpt.config_echo);
  w.pod<std::uint64_t>(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    w.doubles(t.values);
  }
  w.pod<std::uint64_t>(ckpt.loss_history.size());
  w.doubles(ckpt.loss_history);
  if (!out) throw CheckpointError("write failed for checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint '" + path.string() + "' not found");
  Reader r(in, path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint '" + path.string() + "' has format version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  const std::string stage = r.str("stage");
  try {
    c.stage = parse_stage(stage);
  } catch (const ConfigError&) {
    throw CheckpointError("checkpoint '" + path.string() + "' has unknown stage '" + stage + "'");
  }
  c.steps = r.pod<std::uint64_t>("steps");
  c.beta_start = r.pod<double>("beta_start");
  c.beta_end = r.pod<double>("beta_end");
  c.config_echo = r.str("config");
  const auto count = r.pod<std::uint64_t>("block count");
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str("block name");
    const auto rank = r.pod<std::uint32_t>("block rank");
    if (rank > 8) r.fail("block rank");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.pod<std::uint64_t>("block dims"));
      n *= t.shape.back();
    }
    t.values = r.doubles(n, "block values");
    c.tensors.push_back(std::move(t));
  }
  c.loss_history = r.doubles(r.pod<std::uint64_t>("loss count"), "loss history");
  return c;
}

Checkpoint read_checkpoint(const std::filesystem::path& path, Stage expected) {
  Checkpoint c = read_checkpoint(path);
  if (c.stage != expected) {
    throw CheckpointError("checkpoint '" + path.string() + "' is a " + std::string(stage_name(c.stage)) +
                          " checkpoint, expected " + std::string(stage_name(expected)));
  }
  return c;
}

void save_geometry(const std::filesystem::path& path, const GeometryModel& model, const TrainConfig& train,
                   const std::vector<double>& loss_history) {
  write_checkpoint(path, make(Stage::Geometry, model.config, train, model.tensors(), loss_history,
                              {{"model.geometry_hash", std::to_string(model.hash())}}));
}

void save_appearance(const std::filesystem::path& path, const AppearanceModel& model, const TrainConfig& train,
                     const std::vector<double>& loss_history) {
  write_checkpoint(path, make(Stage::Appearance, model.config, train, model.tensors(), loss_history,
                              {{"model.geometry_hash", std::to_string(model.geometry_hash)}}));
}

GeometryModel load_geometry(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path, Stage::Geometry);
  GeometryModel m(model_config(c, path), 0);
  restore(c, m.tensors(), path);
  return m;
}

AppearanceModel load_appearance(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path, Stage::Appearance);
  AppearanceModel m(model_config(c, path), 0);
  restore(c, m.tensors(), path);
  const auto kv = c.config();
  auto it = kv.find("model.geometry_hash");
  if (it == kv.end()) throw CheckpointError("checkpoint '" + path.string() + "' lacks model.geometry_hash");
  try {
    std::size_t used = 0;
    m.geometry_hash = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint '" + path.string() + "' has a malformed model.geometry_hash");
  }
  return m;
}

}  // namespace sketchdiff::diffusion
