#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sketchdiff/diffusion/noise_net.hpp"
#include "sketchdiff/diffusion/schedule.hpp"
#include "sketchdiff/fusion.hpp"
#include "sketchdiff/sketch_encoder.hpp"
#include "sketchdiff/synthdata/dataset_io.hpp"
#include "sketchdiff/text_encoder.hpp"

namespace sketchdiff::diffusion {

enum class Stage { Geometry, Appearance };
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

// How the appearance condition is formed: through the fusion blocks, or
// directly from the text embedding (C_a := T, used for segmentation).
enum class AppearanceCondition { Fusion, Text };
std::string_view appearance_condition_name(AppearanceCondition c);
AppearanceCondition parse_appearance_condition(std::string_view name);

using KeyValues = std::map<std::string, std::string>;

struct ModelConfig {
  std::size_t sketch_size = synth::kSketchSize;
  std::size_t routing_iterations = 3;
  std::size_t steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t hidden = 256;
  std::size_t layers = 4;
  std::size_t time_dim = 64;
  AppearanceCondition appearance_condition = AppearanceCondition::Fusion;

  KeyValues to_kv() const;  // keys prefixed "model."
  static ModelConfig from_kv(const KeyValues& kv);
  DiffusionSchedule schedule() const { return make_schedule(steps, beta_start, beta_end); }
};

// Text conditions for a batch; absent entries use the switch.
using TextBatch = std::vector<std::optional<std::string>>;

// Stage-one parameters: sketch encoder, geometry text encoder and fusion, theta_1.
class GeometryModel {
 public:
  GeometryModel(const ModelConfig& config, std::uint64_t seed);

  nn::TensorList tensors() const;  // includes batch-norm buffers
  std::uint64_t hash() const { return nn::hash_tensors(tensors()); }

  // S [B, D_f]. Training mode uses batch statistics.
  nn::Tensor sketch_embedding(const std::vector<const synth::SketchImage*>& sketches, bool training);
  nn::Tensor sketch_embedding(const std::vector<const synth::SketchImage*>& sketches) const;
  // C_g [B, D_f]
  nn::Tensor condition(const nn::Tensor& s, const TextBatch& texts) const;

  ModelConfig config;
  DiffusionSchedule schedule;
  SketchEncoder sketch;
  TextEncoder text;
  Fusion fusion;
  NoiseNet net;
};

// Stage-two parameters: appearance text encoder and fusion, theta_2.
class AppearanceModel {
 public:
  AppearanceModel(const ModelConfig& config, std::uint64_t seed);

  nn::TensorList tensors() const;
  std::uint64_t hash() const { return nn::hash_tensors(tensors()); }

  // C_a [B, D_f]. Text mode requires a text for every row.
  nn::Tensor condition(const nn::Tensor& s, const TextBatch& texts) const;

  ModelConfig config;
  DiffusionSchedule schedule;
  TextEncoder text;
  Fusion fusion;
  NoiseNet net;
  std::uint64_t geometry_hash = 0;  // geometry parameters this stage was trained on
};

// [B, D_f] text embeddings with zero rows where the text is absent.
nn::Tensor text_embeddings(const TextEncoder& encoder, const TextBatch& texts);

enum class ColorMode { Dataset, Random, Canonical, Mixed };
std::string_view color_mode_name(ColorMode m);
ColorMode parse_color_mode(std::string_view name);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;         // shapes per step
  std::size_t points_per_shape = 256;  // random subset of each cloud per step
  double lr = 2e-3;
  double lr_final = 1.0;  // cosine decay target as a fraction of lr; 1 keeps lr constant
  double clip_norm = 10.0;
  std::uint64_t seed = 1;
  double geometry_text_dropout = 0.5;  // rows trained with the text-absent switch
  double appearance_text_dropout = 0.0;
  // Appearance targets: dataset colors, a fresh random palette color per part
  // (prompt regenerated to match), the segmentation palette, or a per-shape
  // coin flip between the last two.
  ColorMode color_mode = ColorMode::Mixed;

  KeyValues to_kv() const;  // keys prefixed "train."
  static TrainConfig from_kv(const KeyValues& kv);
  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_history;  // one entry per step
};
using TrainLogger = std::function<void(std::size_t step, double loss, double grad_norm)>;

TrainResult train_geometry(GeometryModel& model, const std::vector<synth::DatasetItem>& items,
                           const TrainConfig& config, const TrainLogger& log = {});
// Geometry parameters are only read; the sketch encoder runs in inference mode.
TrainResult train_appearance(AppearanceModel& model, const GeometryModel& geometry,
                             const std::vector<synth::DatasetItem>& items, const TrainConfig& config,
                             const TrainLogger& log = {});

// Called with every intermediate x_t (t = T-1 .. 0) of a chain.
using ChainObserver = std::function<void(std::size_t t, const std::vector<double>& x)>;

// Reverse chain for one shape: x_T ~ N(0, I) from `rng`, then T reverse steps.
// `extra` is g0 for the appearance stage. With `point_keys`, each point draws
// its noise from its own stream keyed by the value, so the chain commutes with
// point permutations. Throws if a state turns non-finite.
std::vector<double> run_chain(const NoiseNet& net, const DiffusionSchedule& s, const nn::Tensor& cond,
                              std::size_t points, Rng& rng, const nn::Tensor* extra = nullptr,
                              const ChainObserver& observer = {},
                              const std::vector<std::uint64_t>* point_keys = nullptr);

// Key of a point for run_chain: a hash of its coordinate bits.
std::uint64_t point_key(const synth::Vec3& p);

struct GenerateOptions {
  std::size_t points = synth::kDefaultPointCount;
  std::uint64_t seed = 0;
  ChainObserver geometry_observer;
  ChainObserver appearance_observer;
};

// Samples g0 with C_g, then (when `appearance` is given) colors with C_a
// conditioned on g0. Colors are mapped back from [-1,1] and clamped at the
// end only. Geometry uses stream derive_seed(seed, 0), appearance stream 1.
synth::ColoredPointCloud generate(const GeometryModel& geometry, const AppearanceModel* appearance,
                                  const synth::SketchImage& sketch, const std::optional<std::string>& text,
                                  const GenerateOptions& options);

// Reruns only the appearance chain for `g0` with a new prompt; the returned
// geometry is a copy of g0.
synth::ColoredPointCloud re_edit(const synth::ColoredPointCloud& g0, const synth::SketchImage& sketch,
                                 const std::optional<std::string>& new_text, std::uint64_t seed,
                                 const GeometryModel& geometry, const AppearanceModel& appearance);

// Appearance chain in text-condition mode for a given geometry (no sketch).
// Noise is keyed by point, so permuting g0 permutes the colors the same way.
std::vector<synth::Rgb> sample_colors_from_text(const AppearanceModel& appearance, const std::vector<synth::Vec3>& g0,
                                                const std::string& text, std::uint64_t seed);

}  // namespace sketchdiff::diffusion
