#include "sketchdiff/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sketchdiff/diffusion/checkpoint.hpp"
#include "sketchdiff/error.hpp"
#include "sketchdiff/evalx.hpp"
#include "sketchdiff/metrics.hpp"
#include "sketchdiff/parallel.hpp"

namespace sketchdiff::cli {

namespace fs = std::filesystem;
using diffusion::GeometryModel;
using diffusion::AppearanceModel;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// key=value fields on one line
class LogLine {
 public:
  LogLine(std::ostream& out, const std::string& cmd) : out_(out) { s_ << "cmd=" << cmd; }
  ~LogLine() { out_ << s_.str() << '\n' << std::flush; }
  LogLine& operator()(const std::string& k, const std::string& v) {
    s_ << ' ' << k << '=' << v;
    return *this;
  }
  LogLine& operator()(const std::string& k, double v) { return (*this)(k, fmt(v)); }
  LogLine& operator()(const std::string& k, std::size_t v) { return (*this)(k, std::to_string(v)); }

 private:
  std::ostream& out_;
  std::ostringstream s_;
};

const std::string& get(const RunConfig& c, const std::string& key) {
  auto it = c.find(key);
  if (it == c.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::size_t get_size(const RunConfig& c, const std::string& key) {
  const auto& s = get(c, key);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s[0] == '-') throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

double get_double(const RunConfig& c, const std::string& key) {
  const auto& s = get(c, key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

bool get_bool(const RunConfig& c, const std::string& key) {
  const auto& s = get(c, key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + s + "'");
}

fs::path need_path(const RunConfig& c, const std::string& key, const std::string& flag) {
  const auto& s = get(c, key);
  if (s.empty()) throw ConfigError("missing required setting '" + key + "' (" + flag + ")");
  return s;
}

std::optional<std::string> optional_text(const RunConfig& c, const std::string& key) {
  const auto& s = get(c, key);
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_resolved(const fs::path& path, const RunConfig& c) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& [k, v] : c) f << k << " = " << v << '\n';
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

fs::path sibling(const fs::path& file, const std::string& ext) {
  fs::path p = file;
  p.replace_extension(ext);
  return p;
}

void need_checkpoint_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw CheckpointError(what + " checkpoint not found: '" + p.string() + "'");
}

GeometryModel open_geometry(const RunConfig& c, const std::string& key, const std::string& flag) {
  const auto p = need_path(c, key, flag);
  need_checkpoint_file(p, "geometry");
  return diffusion::load_geometry(p);
}

AppearanceModel open_appearance(const fs::path& p, const GeometryModel& geometry) {
  need_checkpoint_file(p, "appearance");
  auto app = diffusion::load_appearance(p);
  if (app.geometry_hash != geometry.hash()) {
    throw CheckpointError("appearance checkpoint '" + p.string() + "' was trained against a different geometry model");
  }
  return app;
}

synth::SketchImage open_sketch(const fs::path& p, std::size_t size) {
  auto s = synth::read_pgm(p);
  if (s.width != size || s.height != size) {
    throw DataError("sketch '" + p.string() + "' is " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                    ", model expects " + std::to_string(size) + "x" + std::to_string(size));
  }
  return s;
}

std::optional<std::string> split_filter(const std::string& split) {
  return split == "all" ? std::nullopt : std::optional<std::string>(split);
}

std::vector<synth::DatasetItem> open_dataset(const RunConfig& c, const std::string& split_key) {
  const fs::path root = need_path(c, "data.root", "--data");
  if (!fs::is_directory(root)) throw DataError("data root '" + root.string() + "' is not a directory");
  auto items = synth::read_dataset(root, split_filter(get(c, split_key)));
  if (items.empty()) throw DataError("no items under '" + root.string() + "' for split '" + get(c, split_key) + "'");
  return items;
}

void cmd_gen_data(const RunConfig& c, std::ostream& out) {
  synth::DatasetRequest req;
  for (const auto& name : split_list(get(c, "data.categories"))) req.categories.push_back(synth::parse_category(name));
  if (req.categories.empty()) throw ConfigError("config key 'data.categories': empty category list");
  req.count = get_size(c, "data.count");
  req.seed = get_size(c, "data.seed");
  req.points = get_size(c, "data.points");
  req.view = synth::parse_view(get(c, "data.view"));
  req.text_mode = synth::parse_text_mode(get(c, "data.text_mode"));
  req.sketch_size = get_size(c, "data.sketch_size");
  req.test_fraction = get_double(c, "data.test_fraction");
  req.threads = get_size(c, "threads");
  if (req.count == 0) throw ConfigError("config key 'data.count': must be positive");
  if (req.test_fraction < 0.0 || req.test_fraction >= 1.0) throw ConfigError("config key 'data.test_fraction': must be in [0,1)");
  const fs::path root = need_path(c, "data.root", "--out");
  const auto items = synth::generate_dataset(req);
  std::size_t test = 0;
  double ink = 0.0;
  for (const auto& item : items) {
    synth::write_item(root, item);
    test += item.split == "test";
    ink += item.sketch.ink_fraction();
  }
  write_resolved(root / "gen-data.config", c);
  LogLine(out, "gen-data")("root", root.string())("items", items.size())("train", items.size() - test)("test", test)(
      "mean_ink_fraction", ink / static_cast<double>(items.size()));
}

void cmd_train(const RunConfig& c, std::ostream& out) {
  const auto stage = diffusion::parse_stage(get(c, "train.stage"));
  const auto model_cfg = diffusion::ModelConfig::from_kv(c);
  const auto train_cfg = diffusion::TrainConfig::from_kv(c);
  train_cfg.validate();
  const fs::path out_dir = need_path(c, "train.out", "--out");
  const std::size_t every = std::max<std::size_t>(1, get_size(c, "log.every"));
  const std::string stage_str(diffusion::stage_name(stage));
  auto logger = [&](std::size_t step, double loss, double norm) {
    if (step % every == 0 || step == 1 || step == train_cfg.steps) {
      LogLine(out, "train")("stage", stage_str)("step", step)("loss", loss)("grad_norm", norm);
    }
  };
  fs::path ckpt;
  diffusion::TrainResult result;
  if (stage == diffusion::Stage::Geometry) {
    const auto items = open_dataset(c, "train.split");
    GeometryModel model(model_cfg, train_cfg.seed);
    result = diffusion::train_geometry(model, items, train_cfg, logger);
    fs::create_directories(out_dir);
    ckpt = out_dir / "geometry.ckpt";
    diffusion::save_geometry(ckpt, model, train_cfg, result.loss_history);
    LogLine(out, "train")("stage", stage_str)("checkpoint", ckpt.string())("hash", std::to_string(model.hash()));
  } else {
    const fs::path gpath = get(c, "train.geometry").empty() ? out_dir / "geometry.ckpt" : fs::path(get(c, "train.geometry"));
    need_checkpoint_file(gpath, "geometry");
    const auto geometry = diffusion::load_geometry(gpath);
    if (geometry.config.sketch_size != model_cfg.sketch_size) {
      throw ConfigError("config key 'model.sketch_size': geometry checkpoint uses " +
                        std::to_string(geometry.config.sketch_size));
    }
    const auto items = open_dataset(c, "train.split");
    AppearanceModel model(model_cfg, train_cfg.seed);
    result = diffusion::train_appearance(model, geometry, items, train_cfg, logger);
    fs::create_directories(out_dir);
    ckpt = out_dir / "appearance.ckpt";
    diffusion::save_appearance(ckpt, model, train_cfg, result.loss_history);
    LogLine(out, "train")("stage", stage_str)("checkpoint", ckpt.string())("geometry_hash", std::to_string(geometry.hash()));
  }
  write_resolved(out_dir / ("train-" + stage_str + ".config"), c);
}

fs::path numbered(const fs::path& base, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03zu", k);
  fs::path p = base.parent_path() / (base.stem().string() + buf + base.extension().string());
  return p;
}

void cmd_sample(const RunConfig& c, std::ostream& out) {
  const auto geometry = open_geometry(c, "sample.geometry", "--geometry");
  std::optional<AppearanceModel> appearance;
  if (!get(c, "sample.appearance").empty()) appearance = open_appearance(get(c, "sample.appearance"), geometry);
  const auto sketch = open_sketch(need_path(c, "sample.sketch", "--sketch"), geometry.config.sketch_size);
  const auto text = optional_text(c, "sample.text");
  const fs::path target = need_path(c, "sample.out", "--out");
  const std::size_t count = get_size(c, "sample.count");
  const std::size_t points = get_size(c, "sample.points");
  const std::uint64_t seed = get_size(c, "sample.seed");
  if (count == 0) throw ConfigError("config key 'sample.count': must be positive");
  std::vector<synth::ColoredPointCloud> clouds(count);
  parallel_for(count, get_size(c, "threads"), [&](std::size_t k) {
    diffusion::GenerateOptions opts;
    opts.points = points;
    opts.seed = seed + k;
    clouds[k] = diffusion::generate(geometry, appearance ? &*appearance : nullptr, sketch, text, opts);
  });
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  for (std::size_t k = 0; k < count; ++k) {
    const fs::path p = count == 1 ? target : numbered(target, k);
    synth::write_ply(p, clouds[k], appearance.has_value());
    LogLine(out, "sample")("index", k)("seed", std::to_string(seed + k))("points", points)("out", p.string());
  }
  write_resolved(sibling(target, ".config"), c);
}

void cmd_re_edit(const RunConfig& c, std::ostream& out) {
  const auto geometry = open_geometry(c, "re_edit.geometry", "--geometry");
  const auto appearance = open_appearance(need_path(c, "re_edit.appearance", "--appearance"), geometry);
  const auto cloud = synth::read_ply(need_path(c, "re_edit.input", "--input"));
  const auto sketch = open_sketch(need_path(c, "re_edit.sketch", "--sketch"), geometry.config.sketch_size);
  const fs::path target = need_path(c, "re_edit.out", "--out");
  const auto edited = diffusion::re_edit(cloud, sketch, optional_text(c, "re_edit.text"), get_size(c, "re_edit.seed"),
                                         geometry, appearance);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  synth::write_ply(target, edited, true);
  write_resolved(sibling(target, ".config"), c);
  LogLine(out, "re-edit")("points", edited.size())("out", target.string());
}

void cmd_segment(const RunConfig& c, std::ostream& out) {
  const fs::path apath = need_path(c, "segment.appearance", "--appearance");
  need_checkpoint_file(apath, "appearance");
  const auto appearance = diffusion::load_appearance(apath);
  const auto cloud = synth::read_ply(need_path(c, "segment.input", "--input"));
  const auto category = synth::parse_category(need_path(c, "segment.category", "--category").string());
  const fs::path target = need_path(c, "segment.out", "--out");
  const auto seg = evalx::segment_parts(cloud.g, category, appearance, get_size(c, "segment.seed"));
  const auto words = synth::canonical_color_words(category);
  synth::ColoredPointCloud labeled;
  labeled.g = cloud.g;
  labeled.labels = seg.labels;
  for (int l : seg.labels) labeled.a.push_back(synth::color_rgb(words[static_cast<std::size_t>(l)]));
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  synth::write_ply(target, labeled, true);
  std::ofstream report(sibling(target, ".txt"));
  report << "category = " << synth::category_name(category) << '\n';
  report << "parts = " << seg.k << '\n';
  report << "points = " << cloud.size() << '\n';
  std::size_t empty = 0;
  for (char e : seg.empty_clusters) empty += e != 0;
  report << "empty_clusters = " << empty << '\n';
  for (std::size_t j = 0; j < seg.k; ++j) {
    report << "part." << j << ".points = "
           << std::count(seg.labels.begin(), seg.labels.end(), static_cast<int>(j)) << '\n';
  }
  LogLine line(out, "segment");
  line("category", std::string(synth::category_name(category)))("points", cloud.size())("out", target.string());
  if (cloud.has_labels()) {
    const auto m = evalx::miou(seg.labels, cloud.labels, seg.k);
    report << "miou = " << fmt(m.miou) << '\n';
    for (std::size_t j = 0; j < m.per_class.size(); ++j) {
      if (m.present[j]) report << "iou." << j << " = " << fmt(m.per_class[j]) << '\n';
    }
    line("miou", m.miou);
  }
  if (!report) throw DataError("cannot write segmentation report next to '" + target.string() + "'");
  write_resolved(sibling(target, ".config"), c);
}

std::vector<metrics::Points> read_cloud_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ply") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .ply files in '" + dir.string() + "'");
  std::vector<metrics::Points> out;
  for (const auto& f : files) out.push_back(synth::read_ply(f).g);
  return out;
}

void cmd_metrics(const RunConfig& c, std::ostream& out) {
  const auto gen = read_cloud_dir(need_path(c, "metrics.gen", "--gen"));
  const auto ref = read_cloud_dir(need_path(c, "metrics.ref", "--ref"));
  const fs::path target = need_path(c, "metrics.out", "--out");
  const auto report = metrics::evaluate(gen, ref, get_size(c, "threads"));
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  report.write_csv(target);
  write_resolved(sibling(target, ".config"), c);
  LogLine(out, "metrics")("n_gen", report.n_gen)("n_ref", report.n_ref)("mmd_cd", report.mmd_cd)(
      "mmd_emd", report.mmd_emd)("cov_cd", report.cov_cd)("cov_emd", report.cov_emd);
}

void cmd_probe(const RunConfig& c, std::ostream& out) {
  const auto geometry = open_geometry(c, "probe.geometry", "--geometry");
  const auto items = open_dataset(c, "probe.split");
  std::vector<std::vector<double>> emb(items.size());
  parallel_for(items.size(), get_size(c, "threads"), [&](std::size_t i) {
    nn::NoGradGuard no_grad;
    const auto s = geometry.sketch_embedding({&items[i].sketch});
    emb[i] = geometry.condition(s, {std::nullopt}).values();
  });
  std::vector<int> labels;
  for (const auto& it : items) labels.push_back(static_cast<int>(synth::category_index(it.spec.category)));
  const std::uint64_t seed = get_size(c, "probe.seed");
  const bool shuffled = get_bool(c, "probe.shuffle_labels");
  if (shuffled) {
    Rng rng(derive_seed(seed, 3));
    rng.shuffle(labels);
  }
  evalx::ProbeConfig pc;
  pc.test_fraction = get_double(c, "probe.test_fraction");
  pc.l2 = get_double(c, "probe.l2");
  pc.lr = get_double(c, "probe.lr");
  pc.epochs = get_size(c, "probe.epochs");
  const auto r = evalx::linear_probe(emb, labels, seed, pc);
  const fs::path target = need_path(c, "probe.out", "--out");
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream f(target);
  f << "accuracy = " << fmt(r.accuracy) << '\n'
    << "train_size = " << r.train_size << '\n'
    << "test_size = " << r.test_size << '\n'
    << "classes = " << r.model.classes << '\n'
    << "shuffled_labels = " << (shuffled ? "true" : "false") << '\n';
  if (!f) throw DataError("cannot write '" + target.string() + "'");
  write_resolved(sibling(target, ".config"), c);
  LogLine(out, "probe")("accuracy", r.accuracy)("train_size", r.train_size)("test_size", r.test_size)(
      "shuffled_labels", std::string(shuffled ? "true" : "false"));
}

void cmd_dump_attention(const RunConfig& c, std::ostream& out) {
  const auto geometry = open_geometry(c, "attention.geometry", "--geometry");
  const auto sketch = open_sketch(need_path(c, "attention.sketch", "--sketch"), geometry.config.sketch_size);
  const fs::path dir = need_path(c, "attention.out", "--out");
  const auto f = geometry.sketch.encode(sketch);
  dump_attention(dir, sketch, f.stack);
  const auto sc = instance_scores(sketch, f.stack);
  write_resolved(dir / "dump-attention.config", c);
  LogLine(out, "dump-attention")("iss", sc.iss)("isc", sc.isc)("out", dir.string());
}

struct Flag {
  std::string name, key, help;
};

struct Command {
  std::string name, help;
  std::vector<Flag> flags;
  void (*body)(const RunConfig&, std::ostream&);
};

std::vector<Command> commands() {
  const Flag threads{"--threads", "threads", "worker threads (outputs do not depend on it)"};
  return {
      {"gen-data",
       "generate a synthetic dataset of point clouds, sketches, prompts and specs",
       {{"--categories", "data.categories", "comma-separated categories"},
        {"--count", "data.count", "number of items"},
        {"--seed", "data.seed", "dataset seed"},
        {"--points", "data.points", "points per cloud"},
        {"--view", "data.view", "sketch view: front, side or oblique"},
        {"--text-mode", "data.text_mode", "appearance_only, shape_and_appearance or none"},
        {"--test-fraction", "data.test_fraction", "fraction of items in the test split"},
        {"--sketch-size", "data.sketch_size", "sketch width and height"},
        {"--out", "data.root", "dataset root directory"},
        threads},
       cmd_gen_data},
      {"train",
       "train the geometry or appearance stage",
       {{"--stage", "train.stage", "geometry or appearance"},
        {"--data", "data.root", "dataset root directory"},
        {"--split", "train.split", "train, test or all"},
        {"--out", "train.out", "directory for the checkpoint"},
        {"--geometry", "train.geometry", "geometry checkpoint (appearance stage; default <out>/geometry.ckpt)"},
        {"--steps", "train.steps", "optimizer steps"},
        {"--batch-size", "train.batch_size", "shapes per step"},
        {"--lr", "train.lr", "learning rate"},
        {"--seed", "train.seed", "training seed"},
        {"--log-every", "log.every", "progress line interval in steps"},
        threads},
       cmd_train},
      {"sample",
       "generate point clouds from a sketch and optional text",
       {{"--geometry", "sample.geometry", "geometry checkpoint"},
        {"--appearance", "sample.appearance", "appearance checkpoint (omit for geometry only)"},
        {"--sketch", "sample.sketch", "sketch PGM"},
        {"--text", "sample.text", "prompt (empty for none)"},
        {"--seed", "sample.seed", "seed of the first sample; sample k uses seed + k"},
        {"--points", "sample.points", "points per sample"},
        {"--count", "sample.count", "number of samples; outputs get a _NNN suffix when > 1"},
        {"--out", "sample.out", "output PLY"},
        threads},
       cmd_sample},
      {"re-edit",
       "recolor an existing geometry with a new prompt",
       {{"--geometry", "re_edit.geometry", "geometry checkpoint"},
        {"--appearance", "re_edit.appearance", "appearance checkpoint"},
        {"--input", "re_edit.input", "input PLY whose geometry is kept"},
        {"--sketch", "re_edit.sketch", "sketch PGM of the shape"},
        {"--text", "re_edit.text", "new prompt"},
        {"--seed", "re_edit.seed", "sampling seed"},
        {"--out", "re_edit.out", "output PLY"},
        threads},
       cmd_re_edit},
      {"segment",
       "label the parts of a point cloud through the appearance model",
       {{"--appearance", "segment.appearance", "text-conditioned appearance checkpoint"},
        {"--input", "segment.input", "input PLY"},
        {"--category", "segment.category", "shape category"},
        {"--seed", "segment.seed", "sampling and clustering seed"},
        {"--out", "segment.out", "labeled PLY; the report goes next to it as .txt"},
        threads},
       cmd_segment},
      {"metrics",
       "MMD and COV between two directories of PLY clouds",
       {{"--gen", "metrics.gen", "generated clouds directory"},
        {"--ref", "metrics.ref", "reference clouds directory"},
        {"--out", "metrics.out", "CSV report"},
        threads},
       cmd_metrics},
      {"probe",
       "linear probe of sketch condition embeddings against categories",
       {{"--geometry", "probe.geometry", "geometry checkpoint"},
        {"--data", "data.root", "dataset root directory"},
        {"--split", "probe.split", "train, test or all"},
        {"--seed", "probe.seed", "split and optimizer seed"},
        {"--shuffle-labels", "probe.shuffle_labels", "true to run the shuffled-label control"},
        {"--out", "probe.out", "accuracy report"},
        threads},
       cmd_probe},
      {"dump-attention",
       "write capsule heatmaps and attention scores for a sketch",
       {{"--geometry", "attention.geometry", "geometry checkpoint"},
        {"--sketch", "attention.sketch", "sketch PGM"},
        {"--out", "attention.out", "output directory"},
        threads},
       cmd_dump_attention},
  };
}

int exit_for(const std::exception& e, std::ostream& err, int code) {
  err << "error: " << e.what() << '\n';
  return code;
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  for (const auto& [k, v] : diffusion::ModelConfig{}.to_kv()) c[k] = v;
  for (const auto& [k, v] : diffusion::TrainConfig{}.to_kv()) c[k] = v;
  const char* root = std::getenv("SKETCHDIFF_DATA_ROOT");
  c["data.root"] = root && *root ? root : "data";
  c["data.categories"] = "chair,table,aeroplane,car";
  c["data.count"] = "64";
  c["data.seed"] = "1";
  c["data.points"] = std::to_string(synth::kDefaultPointCount);
  c["data.view"] = std::string(synth::view_name(synth::kDefaultView));
  c["data.text_mode"] = "appearance_only";
  c["data.test_fraction"] = "0.2";
  c["data.sketch_size"] = std::to_string(synth::kSketchSize);
  c["threads"] = "1";
  c["log.every"] = "50";
  c["train.stage"] = "geometry";
  c["train.split"] = "train";
  c["train.out"] = "runs";
  c["train.geometry"] = "";
  for (const char* k : {"geometry", "appearance", "sketch", "text", "out"}) c[std::string("sample.") + k] = "";
  c["sample.seed"] = "0";
  c["sample.points"] = std::to_string(synth::kDefaultPointCount);
  c["sample.count"] = "1";
  for (const char* k : {"geometry", "appearance", "input", "sketch", "text", "out"}) c[std::string("re_edit.") + k] = "";
  c["re_edit.seed"] = "0";
  for (const char* k : {"appearance", "input", "category", "out"}) c[std::string("segment.") + k] = "";
  c["segment.seed"] = "0";
  for (const char* k : {"gen", "ref", "out"}) c[std::string("metrics.") + k] = "";
  const evalx::ProbeConfig pc;
  c["probe.geometry"] = "";
  c["probe.out"] = "";
  c["probe.split"] = "all";
  c["probe.seed"] = "0";
  c["probe.shuffle_labels"] = "false";
  c["probe.test_fraction"] = fmt(pc.test_fraction);
  c["probe.l2"] = fmt(pc.l2);
  c["probe.lr"] = fmt(pc.lr);
  c["probe.epochs"] = std::to_string(pc.epochs);
  for (const char* k : {"geometry", "sketch", "out"}) c[std::string("attention.") + k] = "";
  return c;
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  auto it = config.find(key);
  if (it == config.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void apply_config_file(RunConfig& config, const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: '" + path + "'");
  for (const auto& line : synth::read_key_values(path)) {
    if (!config.count(line.key)) {
      throw ConfigError(path + ":" + std::to_string(line.line) + ": unknown config key '" + line.key + "'");
    }
    config[line.key] = line.value;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sketchdiff: sketch and text guided colored point cloud diffusion"};
  app.require_subcommand(1);
  const auto cmds = commands();
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> sets;
  std::string config_path;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& cmd : cmds) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "key = value config file (defaults < file < flags)");
    sub->add_option("--set", sets, "override any config key as key=value (repeatable)");
    for (const auto& flag : cmd.flags) {
      sub->add_option_function<std::string>(
          flag.name, [&overrides, key = flag.key](const std::string& v) { overrides.emplace_back(key, v); },
          flag.help + " [" + flag.key + "]");
    }
    subs.emplace_back(sub, &cmd);
  }
  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  for (auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      RunConfig c = default_config();
      if (!config_path.empty()) apply_config_file(c, config_path);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_override(c, s.substr(0, eq), s.substr(eq + 1));
      }
      for (const auto& [k, v] : overrides) apply_override(c, k, v);
      if (get_size(c, "threads") == 0) throw ConfigError("config key 'threads': must be positive");
      cmd->body(c, out);
      return kOk;
    } catch (const ConfigError& e) {
      return exit_for(e, err, kUsage);
    } catch (const ContractError& e) {
      return exit_for(e, err, kUsage);
    } catch (const CheckpointError& e) {
      return exit_for(e, err, kCheckpointError);
    } catch (const DataError& e) {
      return exit_for(e, err, kDataError);
    } catch (const std::exception& e) {
      return exit_for(e, err, kDataError);
    }
  }
  return kUsage;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace sketchdiff::cli
