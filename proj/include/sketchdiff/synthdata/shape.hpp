#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sketchdiff::synth {

using Vec3 = std::array<double, 3>;
using Rgb = std::array<double, 3>;

enum class Category { Chair, Table, Aeroplane, Car };

inline constexpr std::array<Category, 4> kAllCategories{Category::Chair, Category::Table, Category::Aeroplane,
                                                        Category::Car};

std::string_view category_name(Category c);
Category parse_category(std::string_view name);  // throws ConfigError
std::size_t category_index(Category c);
// Part names in label order.
const std::vector<std::string>& part_names(Category c);

// Fixed palette; every component is k/255 so colors survive 8-bit storage.
struct PaletteColor {
  std::string_view word;
  Rgb rgb;
};
const std::vector<PaletteColor>& palette();
std::optional<std::string_view> color_word(const Rgb& rgb);
Rgb color_rgb(std::string_view word);  // throws ConfigError

struct Primitive {
  enum class Kind { Box, Cylinder };
  Kind kind = Kind::Box;
  Vec3 center{};
  Vec3 half_extents{};  // box
  double radius = 0.0;       // cylinder
  double half_length = 0.0;  // cylinder
  int axis = 1;              // cylinder axis: 0 = x, 1 = y, 2 = z

  double surface_area() const;
  // Distance from p to the primitive's surface.
  double surface_distance(const Vec3& p) const;
};

struct Part {
  std::string name;
  Rgb color{};
  std::vector<Primitive> primitives;
};

// Maps canonical assembly coordinates to the normalized cloud frame:
// normalized = (canonical - center) / scale.
struct Frame {
  Vec3 center{0.0, 0.0, 0.0};
  double scale = 1.0;
};

struct ShapeSpec {
  Category category = Category::Chair;
  std::vector<Part> parts;
  std::uint64_t seed = 0;
  Frame frame;
  // Shape adjectives derived from the proportions, e.g. {"tall", "square"}.
  std::vector<std::string> adjectives;

  // Checks every part has a primitive, primitives fit [-1,1]^3 and colors are RGB.
  void validate() const;
};

struct ColoredPointCloud {
  std::vector<Vec3> g;
  std::vector<Rgb> a;
  std::vector<int> labels;  // empty when unlabeled

  std::size_t size() const { return g.size(); }
  bool has_labels() const { return !labels.empty(); }
};

inline constexpr std::size_t kDefaultPointCount = 2048;

struct GeneratedShape {
  ShapeSpec spec;
  ColoredPointCloud cloud;  // normalized; spec.frame records the transform
};

// Procedural primitive assembly for `category`, sampled area-uniformly with
// per-part quotas, colored per part and normalized. Deterministic in
// (category, seed, points).
GeneratedShape generate_shape(Category category, std::uint64_t seed, std::size_t points = kDefaultPointCount);

// Zero mean, isotropic scale to max |coordinate| = 1. Throws DataError on an
// empty or zero-extent cloud. `frame` receives the applied transform.
ColoredPointCloud normalize_cloud(const ColoredPointCloud& cloud, Frame* frame = nullptr);

// Fresh area-uniform sample of the same surface, mapped through spec.frame so
// it lives in the frame of the originally generated cloud.
ColoredPointCloud resample_cloud(const ShapeSpec& spec, std::size_t points, std::uint64_t seed);

// Copy of the spec with part i colored palette entry `words[i]`.
ShapeSpec recolor(const ShapeSpec& spec, const std::vector<std::string>& words);
// Colors the points of a labeled cloud from the spec's part colors.
void apply_part_colors(const ShapeSpec& spec, ColoredPointCloud& cloud);

// Segmentation palette: part 0 blue, part 1 green, part 2 red.
std::vector<std::string> canonical_color_words(Category c);

}  // namespace sketchdiff::synth
