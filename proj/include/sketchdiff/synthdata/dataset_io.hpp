#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sketchdiff/synthdata/shape.hpp"
#include "sketchdiff/synthdata/sketch.hpp"
#include "sketchdiff/synthdata/text.hpp"

namespace sketchdiff::synth {

namespace fs = std::filesystem;

// ASCII PLY: x y z as 32-bit floats, optional red green blue as uchar and an
// optional int label. Coordinates read back as the stored float values.
void write_ply(const fs::path& path, const ColoredPointCloud& cloud, bool with_color = true);
ColoredPointCloud read_ply(const fs::path& path);

// Binary 8-bit PGM (P5).
void write_pgm(const fs::path& path, const SketchImage& image);
SketchImage read_pgm(const fs::path& path);

void write_spec(const fs::path& path, const ShapeSpec& spec);
ShapeSpec read_spec(const fs::path& path);

void write_prompt(const fs::path& path, const std::optional<TextPrompt>& prompt);
std::optional<TextPrompt> read_prompt(const fs::path& path);

// `key = value` lines; blank lines and '#' comments skipped.
struct KeyValueLine {
  std::size_t line;
  std::string key;
  std::string value;
};
std::vector<KeyValueLine> read_key_values(const fs::path& path);

struct DatasetItem {
  std::string split;
  std::string id;
  ShapeSpec spec;
  ColoredPointCloud cloud;
  SketchImage sketch;
  std::optional<TextPrompt> prompt;
};

// <root>/<split>/<id>.{ply,pgm,txt,spec}
void write_item(const fs::path& root, const DatasetItem& item);
DatasetItem read_item(const fs::path& root, const std::string& split, const std::string& id);
// Items of every split (or just `split`), sorted by split then id. Cross-file
// invariants are validated (labels index parts, colors match part colors,
// prompt text regenerates from its attributes).
std::vector<DatasetItem> read_dataset(const fs::path& root, const std::optional<std::string>& split = std::nullopt);

struct DatasetRequest {
  std::vector<Category> categories;
  std::size_t count = 64;
  std::uint64_t seed = 1;
  std::size_t points = kDefaultPointCount;
  View view = kDefaultView;
  TextMode text_mode = TextMode::AppearanceOnly;
  std::size_t sketch_size = kSketchSize;
  double test_fraction = 0.2;
  std::size_t threads = 1;
};

// Generates `count` items cycling through the categories. Item k uses shape
// seed derive_seed(seed, k); the last round(count * test_fraction) items form
// the "test" split. Output is independent of the thread count.
std::vector<DatasetItem> generate_dataset(const DatasetRequest& request);

DatasetItem make_item(Category category, std::uint64_t shape_seed, const DatasetRequest& request);

}  // namespace sketchdiff::synth
