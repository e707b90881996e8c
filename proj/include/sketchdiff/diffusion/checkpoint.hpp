#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sketchdiff/diffusion/staged.hpp"

namespace sketchdiff::diffusion {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  nn::Shape shape;
  std::vector<double> values;
};

// Binary layout, little-endian: magic "STPDCKPT", u32 version, stage tag,
// u64 T, f64 beta_start, f64 beta_end, config echo (key = value lines),
// u64 block count, blocks of (name, u32 rank, u64 dims, f64 values),
// u64 loss count, f64 losses. Strings are u64 length + bytes.
struct Checkpoint {
  Stage stage = Stage::Geometry;
  std::uint64_t steps = 0;
  double beta_start = 0.0, beta_end = 0.0;
  std::string config_echo;
  std::vector<StoredTensor> tensors;
  std::vector<double> loss_history;

  KeyValues config() const;  // parsed config echo
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws CheckpointError on a missing file, bad magic, version or stage.
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path, Stage expected);

std::string echo_config(const KeyValues& kv);

void save_geometry(const std::filesystem::path& path, const GeometryModel& model, const TrainConfig& train,
                   const std::vector<double>& loss_history);
void save_appearance(const std::filesystem::path& path, const AppearanceModel& model, const TrainConfig& train,
                     const std::vector<double>& loss_history);
GeometryModel load_geometry(const std::filesystem::path& path);
AppearanceModel load_appearance(const std::filesystem::path& path);

}  // namespace sketchdiff::diffusion
