#include "sketchdiff/diffusion/staged.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <numeric>

#include "sketchdiff/error.hpp"
#include "sketchdiff/synthdata/text.hpp"

namespace sketchdiff::diffusion {

using nn::Tensor;

std::string_view stage_name(Stage s) { return s == Stage::Geometry ? "geometry" : "appearance"; }

Stage parse_stage(std::string_view name) {
  if (name == "geometry") return Stage::Geometry;
  if (name == "appearance") return Stage::Appearance;
  throw ConfigError("unknown stage '" + std::string(name) + "' (expected geometry or appearance)");
}

std::string_view appearance_condition_name(AppearanceCondition c) {
  return c == AppearanceCondition::Fusion ? "fusion" : "text";
}

AppearanceCondition parse_appearance_condition(std::string_view name) {
  if (name == "fusion") return AppearanceCondition::Fusion;
  if (name == "text") return AppearanceCondition::Text;
  throw ConfigError("unknown appearance condition '" + std::string(name) + "' (expected fusion or text)");
}

std::string_view color_mode_name(ColorMode m) {
  switch (m) {
    case ColorMode::Dataset: return "dataset";
    case ColorMode::Random: return "random";
    case ColorMode::Canonical: return "canonical";
    case ColorMode::Mixed: return "mixed";
  }
  return "?";
}

ColorMode parse_color_mode(std::string_view name) {
  for (auto m : {ColorMode::Dataset, ColorMode::Random, ColorMode::Canonical, ColorMode::Mixed}) {
    if (color_mode_name(m) == name) return m;
  }
  throw ConfigError("unknown color mode '" + std::string(name) + "' (expected dataset, random, canonical or mixed)");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& need(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

std::size_t as_size(const KeyValues& kv, const std::string& key) {
  const auto& s = need(kv, key);
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "': not a non-negative integer: '" + s + "'");
  }
}

double as_double(const KeyValues& kv, const std::string& key) {
  const auto& s = need(kv, key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "': not a number: '" + s + "'");
  }
}

std::vector<double> point_rows(const std::vector<synth::Vec3>& pts) {
  std::vector<double> v;
  v.reserve(pts.size() * 3);
  for (const auto& p : pts) v.insert(v.end(), p.begin(), p.end());
  return v;
}

// Epoch-style sampler of item indices.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, Rng& rng) : n_(n), rng_(rng) {}

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    if (batch >= n_) {
      out.resize(n_);
      std::iota(out.begin(), out.end(), std::size_t{0});
      return out;
    }
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// `count` distinct indices of [0, n) (all of them, in order, if count >= n).
std::vector<std::size_t> subsample(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= n) return idx;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

void check_items(const std::vector<synth::DatasetItem>& items, std::size_t sketch_size) {
  if (items.empty()) throw DataError("training set is empty");
  for (const auto& it : items) {
    if (it.cloud.size() == 0) throw DataError("item " + it.id + " has no points");
    if (it.sketch.width != sketch_size || it.sketch.height != sketch_size) {
      throw DataError("item " + it.id + " sketch is not " + std::to_string(sketch_size) + "x" + std::to_string(sketch_size));
    }
  }
}

nn::TensorList trainable(const nn::TensorList& all) {
  nn::TensorList out;
  for (const auto& t : all)
    if (t.trainable) out.push_back(t);
  return out;
}

}  // namespace

KeyValues ModelConfig::to_kv() const {
  return {{"model.sketch_size", std::to_string(sketch_size)},
          {"model.routing_iterations", std::to_string(routing_iterations)},
          {"model.steps", std::to_string(steps)},
          {"model.beta_start", fmt(beta_start)},
          {"model.beta_end", fmt(beta_end)},
          {"model.hidden", std::to_string(hidden)},
          {"model.layers", std::to_string(layers)},
          {"model.time_dim", std::to_string(time_dim)},
          {"model.appearance_condition", std::string(appearance_condition_name(appearance_condition))}};
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  c.sketch_size = as_size(kv, "model.sketch_size");
  c.routing_iterations = as_size(kv, "model.routing_iterations");
  c.steps = as_size(kv, "model.steps");
  c.beta_start = as_double(kv, "model.beta_start");
  c.beta_end = as_double(kv, "model.beta_end");
  c.hidden = as_size(kv, "model.hidden");
  c.layers = as_size(kv, "model.layers");
  c.time_dim = as_size(kv, "model.time_dim");
  c.appearance_condition = parse_appearance_condition(need(kv, "model.appearance_condition"));
  return c;
}

KeyValues TrainConfig::to_kv() const {
  return {{"train.steps", std::to_string(steps)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.points_per_shape", std::to_string(points_per_shape)},
          {"train.lr", fmt(lr)},
          {"train.lr_final", fmt(lr_final)},
          {"train.clip_norm", fmt(clip_norm)},
          {"train.seed", std::to_string(seed)},
          {"train.geometry_text_dropout", fmt(geometry_text_dropout)},
          {"train.appearance_text_dropout", fmt(appearance_text_dropout)},
          {"train.color_mode", std::string(color_mode_name(color_mode))}};
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  TrainConfig c;
  c.steps = as_size(kv, "train.steps");
  c.batch_size = as_size(kv, "train.batch_size");
  c.points_per_shape = as_size(kv, "train.points_per_shape");
  c.lr = as_double(kv, "train.lr");
  c.lr_final = as_double(kv, "train.lr_final");
  c.clip_norm = as_double(kv, "train.clip_norm");
  c.seed = as_size(kv, "train.seed");
  c.geometry_text_dropout = as_double(kv, "train.geometry_text_dropout");
  c.appearance_text_dropout = as_double(kv, "train.appearance_text_dropout");
  c.color_mode = parse_color_mode(need(kv, "train.color_mode"));
  return c;
}

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train: steps must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (points_per_shape == 0) throw ConfigError("train: points_per_shape must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (lr_final < 0.0 || lr_final > 1.0) throw ConfigError("train: lr_final must be in [0,1]");
  for (double p : {geometry_text_dropout, appearance_text_dropout}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("train: text dropout must be in [0,1]");
  }
}

GeometryModel::GeometryModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg), schedule(cfg.schedule()) {
  Rng rng(derive_seed(seed, 100));
  SketchEncoderConfig sc;
  sc.input_size = cfg.sketch_size;
  sc.routing_iterations = cfg.routing_iterations;
  sketch = SketchEncoder(sc, rng);
  text = TextEncoder(TextEncoderConfig{}, rng);
  fusion = Fusion(FusionConfig{}, ConditionKind::Geometry, rng);
  NoiseNetConfig nc;
  nc.cond_dim = sc.embedding_dim();
  nc.time_dim = cfg.time_dim;
  nc.hidden = cfg.hidden;
  nc.layers = cfg.layers;
  net = NoiseNet(nc, rng);
}

nn::TensorList GeometryModel::tensors() const {
  nn::TensorList out;
  sketch.collect("sketch", out);
  text.collect("geometry.text", out);
  fusion.collect("geometry.fusion", out);
  net.collect("geometry.net", out);
  return out;
}

Tensor GeometryModel::sketch_embedding(const std::vector<const synth::SketchImage*>& sketches, bool training) {
  return sketch.forward(sketch_batch(sketches, config.sketch_size), training).embedding;
}

Tensor GeometryModel::sketch_embedding(const std::vector<const synth::SketchImage*>& sketches) const {
  return sketch.infer(sketch_batch(sketches, config.sketch_size)).embedding;
}

Tensor text_embeddings(const TextEncoder& encoder, const TextBatch& texts) {
  std::vector<Tensor> rows;
  bool any = false;
  for (const auto& t : texts) {
    if (t) {
      rows.push_back(encoder.encode(tokenize(*t, Vocabulary::builtin(), kMaxTokens, encoder.config().max_len)));
      any = true;
    } else {
      rows.push_back(Tensor::zeros({1, encoder.config().out_dim}));
    }
  }
  if (!any) return Tensor();
  return rows.size() == 1 ? rows[0] : nn::concat(rows, 0);
}

namespace {

std::vector<unsigned char> presence(const TextBatch& texts) {
  std::vector<unsigned char> p;
  for (const auto& t : texts) p.push_back(t ? 1 : 0);
  return p;
}

}  // namespace

Tensor GeometryModel::condition(const Tensor& s, const TextBatch& texts) const {
  return fusion(s, text_embeddings(text, texts), presence(texts)).condition;
}

AppearanceModel::AppearanceModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg), schedule(cfg.schedule()) {
  Rng rng(derive_seed(seed, 200));
  text = TextEncoder(TextEncoderConfig{}, rng);
  fusion = Fusion(FusionConfig{}, ConditionKind::Appearance, rng);
  NoiseNetConfig nc;
  nc.extra_dim = 3;
  nc.cond_dim = FusionConfig{}.dim();
  nc.time_dim = cfg.time_dim;
  nc.hidden = cfg.hidden;
  nc.layers = cfg.layers;
  net = NoiseNet(nc, rng);
}

nn::TensorList AppearanceModel::tensors() const {
  nn::TensorList out;
  text.collect("appearance.text", out);
  fusion.collect("appearance.fusion", out);
  net.collect("appearance.net", out);
  return out;
}

Tensor AppearanceModel::condition(const Tensor& s, const TextBatch& texts) const {
  if (config.appearance_condition == AppearanceCondition::Text) {
    for (const auto& t : texts) {
      if (!t) throw ContractError("text-conditioned appearance model needs a prompt for every shape");
    }
    return text_embeddings(text, texts);
  }
  return fusion(s, text_embeddings(text, texts), presence(texts)).condition;
}

namespace {
double cosine_lr(const TrainConfig& cfg, std::size_t step) {
  const double progress = cfg.steps > 1 ? static_cast<double>(step - 1) / static_cast<double>(cfg.steps - 1) : 0.0;
  const double floor = cfg.lr * cfg.lr_final;
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}
}  // namespace

TrainResult train_geometry(GeometryModel& model, const std::vector<synth::DatasetItem>& items, const TrainConfig& cfg,
                           const TrainLogger& log) {
  cfg.validate();
  check_items(items, model.config.sketch_size);
  nn::Adam opt(trainable(model.tensors()), {cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  Rng rng(derive_seed(cfg.seed, 10));
  BatchCursor cursor(items.size(), rng);
  TrainResult result;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    opt.set_lr(cosine_lr(cfg, step));
    const auto batch = cursor.next(cfg.batch_size);
    std::vector<const synth::SketchImage*> sketches;
    TextBatch texts;
    std::vector<double> x0;
    std::size_t per_shape = cfg.points_per_shape;
    for (auto k : batch) per_shape = std::min(per_shape, items[k].cloud.size());
    for (auto k : batch) {
      const auto& item = items[k];
      sketches.push_back(&item.sketch);
      const bool drop = rng.uniform() < cfg.geometry_text_dropout;
      texts.push_back(item.prompt && !drop ? std::optional<std::string>(item.prompt->text) : std::nullopt);
      for (auto i : subsample(item.cloud.size(), per_shape, rng)) {
        x0.insert(x0.end(), item.cloud.g[i].begin(), item.cloud.g[i].end());
      }
    }
    const Tensor s = model.sketch_embedding(sketches, true);
    const Tensor cond = model.condition(s, texts);
    const Tensor x = Tensor::from({batch.size() * per_shape, 3}, std::move(x0));
    Tensor loss = denoise_loss(model.net, x, cond, model.schedule, rng);
    loss.backward();
    const double norm = opt.step();
    result.loss_history.push_back(loss.item());
    if (log) log(step, loss.item(), norm);
  }
  return result;
}

TrainResult train_appearance(AppearanceModel& model, const GeometryModel& geometry,
                             const std::vector<synth::DatasetItem>& items, const TrainConfig& cfg,
                             const TrainLogger& log) {
  cfg.validate();
  check_items(items, geometry.config.sketch_size);
  model.geometry_hash = geometry.hash();
  // The frozen sketch encoder is deterministic in inference mode, so S is
  // computed once per item.
  Tensor s_table;
  {
    nn::NoGradGuard no_grad;
    std::vector<const synth::SketchImage*> all;
    for (const auto& it : items) all.push_back(&it.sketch);
    s_table = geometry.sketch_embedding(all).detach();
  }
  nn::Adam opt(trainable(model.tensors()), {cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  Rng rng(derive_seed(cfg.seed, 20));
  BatchCursor cursor(items.size(), rng);
  const auto& pal = synth::palette();
  TrainResult result;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    opt.set_lr(cosine_lr(cfg, step));
    const auto batch = cursor.next(cfg.batch_size);
    TextBatch texts;
    std::vector<double> x0, g0;
    std::size_t per_shape = cfg.points_per_shape;
    for (auto k : batch) per_shape = std::min(per_shape, items[k].cloud.size());
    for (auto k : batch) {
      const auto& item = items[k];
      const std::size_t parts = item.spec.parts.size();
      std::vector<synth::Rgb> part_rgb;
      std::optional<std::string> text = item.prompt ? std::optional<std::string>(item.prompt->text) : std::nullopt;
      const bool relabel = cfg.color_mode != ColorMode::Dataset && item.cloud.has_labels();
      if (relabel) {
        synth::TextAttributes attr;
        attr.category = item.spec.category;
        attr.part_colors = synth::canonical_color_words(item.spec.category);
        const bool random = cfg.color_mode == ColorMode::Random ||
                            (cfg.color_mode == ColorMode::Mixed && rng.uniform() < 0.5);
        if (random) {
          for (std::size_t p = 0; p < parts; ++p) {
            attr.part_colors[p] = std::string(pal[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pal.size()) - 1))].word);
          }
        }
        for (const auto& w : attr.part_colors) part_rgb.push_back(synth::color_rgb(w));
        text = synth::render_template(attr);
      }
      if (rng.uniform() < cfg.appearance_text_dropout) text.reset();
      texts.push_back(text);
      for (auto i : subsample(item.cloud.size(), per_shape, rng)) {
        const synth::Rgb& c = relabel ? part_rgb[static_cast<std::size_t>(item.cloud.labels[i])] : item.cloud.a.at(i);
        for (int ch = 0; ch < 3; ++ch) x0.push_back(2.0 * c[ch] - 1.0);
        g0.insert(g0.end(), item.cloud.g[i].begin(), item.cloud.g[i].end());
      }
    }
    const Tensor s = nn::embedding(s_table, batch);
    const Tensor cond = model.condition(s, texts);
    const std::size_t rows = batch.size() * per_shape;
    const Tensor x = Tensor::from({rows, 3}, std::move(x0));
    const Tensor g = Tensor::from({rows, 3}, std::move(g0));
    Tensor loss = denoise_loss(model.net, x, cond, model.schedule, rng, &g);
    loss.backward();
    const double norm = opt.step();
    result.loss_history.push_back(loss.item());
    if (log) log(step, loss.item(), norm);
  }
  return result;
}

std::uint64_t point_key(const synth::Vec3& p) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (double c : p) {
    const double v = c == 0.0 ? 0.0 : c;  // -0 and +0 share a key
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix64(h ^ bits);
  }
  return h;
}

std::vector<double> run_chain(const NoiseNet& net, const DiffusionSchedule& s, const Tensor& cond, std::size_t points,
                              Rng& rng, const Tensor* extra, const ChainObserver& observer,
                              const std::vector<std::uint64_t>* point_keys) {
  nn::NoGradGuard no_grad;
  const std::size_t d = net.config().point_dim;
  std::vector<double> x(points * d), z(points * d);
  std::vector<Rng> streams;
  if (point_keys) {
    if (point_keys->size() != points) throw ConfigError("run_chain: one key per point required");
    const std::uint64_t base = rng.next();
    streams.reserve(points);
    for (auto k : *point_keys) streams.emplace_back(derive_seed(base, k));
  }
  auto draw = [&](std::vector<double>& out) {
    if (streams.empty()) {
      rng.fill_normal(out);
      return;
    }
    for (std::size_t i = 0; i < points; ++i)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] = streams[i].normal();
  };
  draw(x);
  for (std::size_t t = s.steps; t >= 1; --t) {
    const Tensor eps = net.predict(Tensor::from({points, d}, x), {t}, cond, extra);
    if (t > 1) draw(z);
    x = reverse_step(x, eps.values(), t, s, z);
    for (double v : x) {
      if (!std::isfinite(v)) throw Error("reverse chain produced a non-finite value at t=" + std::to_string(t - 1));
    }
    if (observer) observer(t - 1, x);
  }
  return x;
}

namespace {

std::vector<synth::Rgb> appearance_chain(const AppearanceModel& app, const Tensor& cond, const std::vector<double>& g,
                                         std::uint64_t seed, const ChainObserver& observer,
                                         const std::vector<std::uint64_t>* keys = nullptr) {
  const std::size_t n = g.size() / 3;
  const Tensor extra = Tensor::from({n, 3}, g);
  Rng rng(derive_seed(seed, 1));
  const auto a = run_chain(app.net, app.schedule, cond, n, rng, &extra, observer, keys);
  std::vector<synth::Rgb> colors(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch) colors[i][ch] = std::clamp((a[i * 3 + ch] + 1.0) / 2.0, 0.0, 1.0);
  return colors;
}

}  // namespace

synth::ColoredPointCloud generate(const GeometryModel& geometry, const AppearanceModel* appearance,
                                  const synth::SketchImage& sketch, const std::optional<std::string>& text,
                                  const GenerateOptions& options) {
  if (options.points == 0) throw ConfigError("generate: point count must be positive");
  nn::NoGradGuard no_grad;
  const Tensor s = geometry.sketch_embedding({&sketch});
  const Tensor cg = geometry.condition(s, {text});
  Rng rng(derive_seed(options.seed, 0));
  const auto g = run_chain(geometry.net, geometry.schedule, cg, options.points, rng, nullptr, options.geometry_observer);
  synth::ColoredPointCloud cloud;
  cloud.g.resize(options.points);
  for (std::size_t i = 0; i < options.points; ++i) cloud.g[i] = {g[i * 3], g[i * 3 + 1], g[i * 3 + 2]};
  if (appearance) {
    const Tensor ca = appearance->condition(s, {text});
    cloud.a = appearance_chain(*appearance, ca, g, options.seed, options.appearance_observer);
  }
  return cloud;
}

synth::ColoredPointCloud re_edit(const synth::ColoredPointCloud& g0, const synth::SketchImage& sketch,
                                 const std::optional<std::string>& new_text, std::uint64_t seed,
                                 const GeometryModel& geometry, const AppearanceModel& appearance) {
  if (g0.size() == 0) throw DataError("re_edit: empty geometry");
  nn::NoGradGuard no_grad;
  const Tensor s = geometry.sketch_embedding({&sketch});
  const Tensor ca = appearance.condition(s, {new_text});
  synth::ColoredPointCloud out;
  out.g = g0.g;
  out.labels = g0.labels;
  out.a = appearance_chain(appearance, ca, point_rows(g0.g), seed, {});
  return out;
}

std::vector<synth::Rgb> sample_colors_from_text(const AppearanceModel& appearance, const std::vector<synth::Vec3>& g0,
                                                const std::string& text, std::uint64_t seed) {
  if (appearance.config.appearance_condition != AppearanceCondition::Text) {
    throw ContractError("sample_colors_from_text needs a text-conditioned appearance model");
  }
  if (g0.empty()) throw DataError("empty geometry");
  nn::NoGradGuard no_grad;
  const Tensor ca = appearance.condition(Tensor(), {text});
  std::vector<std::uint64_t> keys;
  for (const auto& p : g0) keys.push_back(point_key(p));
  return appearance_chain(appearance, ca, point_rows(g0), seed, {}, &keys);
}

}  // namespace sketchdiff::diffusion
