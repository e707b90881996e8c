#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "sketchdiff/synthdata/shape.hpp"

namespace sketchdiff::synth {

// Row-major raster, row 0 at the top; 1 = ink, 0 = background.
struct SketchImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  SketchImage() = default;
  SketchImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0.0) {}

  double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  std::size_t ink_pixels() const;
  double ink_fraction() const;
};

// Orthographic cameras: front looks down -z, side down -x, oblique is a
// yawed and pitched three-quarter view.
enum class View { Front, Side, Oblique };
inline constexpr View kDefaultView = View::Oblique;
inline constexpr std::size_t kSketchSize = 64;

std::string_view view_name(View v);
View parse_view(std::string_view name);

// Visible silhouette and crease edges of the spec's primitives (canonical
// frame), one-pixel strokes, hidden lines removed with a depth buffer.
SketchImage render_sketch(const ShapeSpec& spec, View view, std::size_t width = kSketchSize,
                          std::size_t height = kSketchSize);

}  // namespace sketchdiff::synth
