#include "sketchdiff/synthdata/text.hpp"

#include <algorithm>

#include "sketchdiff/error.hpp"
#include "sketchdiff/rng.hpp"

namespace sketchdiff::synth {

namespace {
const std::vector<std::string> kAdjectives{"tall", "short", "wide", "narrow", "round", "square"};
}

std::string_view text_mode_name(TextMode m) {
  switch (m) {
    case TextMode::AppearanceOnly: return "appearance_only";
    case TextMode::ShapeAndAppearance: return "shape_and_appearance";
    case TextMode::None: return "none";
  }
  return "?";
}

TextMode parse_text_mode(std::string_view name) {
  for (auto m : {TextMode::AppearanceOnly, TextMode::ShapeAndAppearance, TextMode::None}) {
    if (text_mode_name(m) == name) return m;
  }
  throw ConfigError("unknown text mode '" + std::string(name) + "'");
}

const std::vector<std::string>& vocabulary_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w{"a", "an", "with", "and"};
    for (auto c : kAllCategories) w.emplace_back(category_name(c));
    for (auto c : kAllCategories) {
      for (const auto& p : part_names(c)) {
        if (std::find(w.begin(), w.end(), p) == w.end()) w.push_back(p);
      }
    }
    for (const auto& c : palette()) w.emplace_back(c.word);
    for (const auto& a : kAdjectives) w.push_back(a);
    return w;
  }();
  return words;
}

std::string render_template(const TextAttributes& attributes) {
  const auto& parts = part_names(attributes.category);
  if (attributes.part_colors.size() != parts.size()) {
    throw ConfigError("text template: need one color per part of " + std::string(category_name(attributes.category)));
  }
  std::string s = "a";
  for (const auto& adj : attributes.adjectives) s += " " + adj;
  s += " " + attributes.part_colors[0] + " " + std::string(category_name(attributes.category));
  for (std::size_t i = 1; i < parts.size(); ++i) {
    s += i == 1 ? " with " : " and ";
    s += attributes.part_colors[i] + " " + parts[i];
  }
  return s;
}

std::optional<TextPrompt> generate_text(const ShapeSpec& spec, TextMode mode, std::uint64_t seed) {
  if (mode == TextMode::None) return std::nullopt;
  TextPrompt prompt;
  prompt.mode = mode;
  prompt.attributes.category = spec.category;
  for (const auto& part : spec.parts) {
    auto word = color_word(part.color);
    if (!word) throw DataError("generate_text: part '" + part.name + "' color is not a palette color");
    prompt.attributes.part_colors.emplace_back(*word);
  }
  if (mode == TextMode::ShapeAndAppearance && !spec.adjectives.empty()) {
    // a non-empty subset of the spec's adjectives, kept in spec order
    Rng rng(derive_seed(seed, spec.seed));
    const auto n = spec.adjectives.size();
    const auto mask = static_cast<std::uint64_t>(rng.integer(1, (std::int64_t{1} << n) - 1));
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::uint64_t{1} << i)) prompt.attributes.adjectives.push_back(spec.adjectives[i]);
    }
  }
  prompt.text = render_template(prompt.attributes);
  return prompt;
}

std::string canonical_prompt(Category c) {
  TextAttributes attr;
  attr.category = c;
  attr.part_colors = canonical_color_words(c);
  return render_template(attr);
}

}  // namespace sketchdiff::synth
