#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sketchdiff/synthdata/shape.hpp"

namespace sketchdiff::synth {

enum class TextMode { AppearanceOnly, ShapeAndAppearance, None };

std::string_view text_mode_name(TextMode m);
TextMode parse_text_mode(std::string_view name);

struct TextAttributes {
  Category category = Category::Chair;
  std::vector<std::string> part_colors;  // color word per part, label order
  std::vector<std::string> adjectives;   // shape adjectives in template order
};

struct TextPrompt {
  std::string text;
  TextMode mode = TextMode::AppearanceOnly;
  TextAttributes attributes;
};

// Every word the template grammar can emit, in vocabulary-index order.
const std::vector<std::string>& vocabulary_words();

// "a [adj ...] <c0> <category> with <c1> <part1> [and <c2> <part2>]".
std::string render_template(const TextAttributes& attributes);

// Fills the template from the spec. `seed` picks which of the spec's shape
// adjectives appear in ShapeAndAppearance mode; None returns nullopt.
std::optional<TextPrompt> generate_text(const ShapeSpec& spec, TextMode mode, std::uint64_t seed);

// Template sentence with the segmentation palette, e.g.
// "a blue aeroplane with green wings and red tail".
std::string canonical_prompt(Category c);

}  // namespace sketchdiff::synth
