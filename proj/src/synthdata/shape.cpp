#include "sketchdiff/synthdata/shape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sketchdiff/error.hpp"
#include "sketchdiff/rng.hpp"

namespace sketchdiff::synth {

namespace {

Rgb rgb255(int r, int g, int b) { return {r / 255.0, g / 255.0, b / 255.0}; }

Primitive box(Vec3 center, Vec3 half) {
  Primitive p;
  p.kind = Primitive::Kind::Box;
  p.center = center;
  p.half_extents = half;
  return p;
}

Primitive cylinder(Vec3 center, double radius, double half_length, int axis) {
  Primitive p;
  p.kind = Primitive::Kind::Cylinder;
  p.center = center;
  p.radius = radius;
  p.half_length = half_length;
  p.axis = axis;
  return p;
}

// Leg or wheel: a box of half-thickness t or a cylinder of radius t.
Primitive post(Vec3 center, double thickness, double half_height, bool round) {
  if (round) return cylinder(center, thickness, half_height, 1);
  return box(center, {thickness, half_height, thickness});
}

ShapeSpec build_chair(Rng& rng) {
  ShapeSpec s;
  const double sw = rng.uniform(0.35, 0.5), sd = rng.uniform(0.35, 0.5), st = rng.uniform(0.03, 0.06);
  const double sh = rng.uniform(-0.15, 0.05);
  const double floor = -0.85;
  const double lt = rng.uniform(0.03, 0.055);
  const bool round_legs = rng.uniform() < 0.5;
  const double bh = rng.uniform(0.4, 0.75), bt = rng.uniform(0.03, 0.06);

  Part seat{"seat", {}, {box({0.0, sh, 0.0}, {sw, st, sd})}};
  Part back{"back", {}, {box({0.0, sh + st + bh / 2.0, -sd + bt}, {sw, bh / 2.0, bt})}};
  Part legs{"legs", {}, {}};
  const double leg_half = (sh - st - floor) / 2.0;
  for (double x : {-1.0, 1.0})
    for (double z : {-1.0, 1.0})
      legs.primitives.push_back(post({x * (sw - lt), floor + leg_half, z * (sd - lt)}, lt, leg_half, round_legs));
  s.parts = {seat, back, legs};
  s.adjectives = {bh >= 0.55 ? "tall" : "short", sw >= 0.43 ? "wide" : "narrow"};
  return s;
}

ShapeSpec build_table(Rng& rng) {
  ShapeSpec s;
  const bool round_top = rng.uniform() < 0.4;
  const double top_y = rng.uniform(0.05, 0.4), tt = rng.uniform(0.03, 0.06);
  const double floor = -0.8;
  const double lt = rng.uniform(0.035, 0.06);
  const bool round_legs = rng.uniform() < 0.5;
  Part top{"top", {}, {}};
  Part legs{"legs", {}, {}};
  const double leg_half = (top_y - tt - floor) / 2.0;
  if (round_top) {
    const double r = rng.uniform(0.5, 0.85);
    top.primitives.push_back(cylinder({0.0, top_y, 0.0}, r, tt, 1));
    const double off = r * 0.55;
    for (double x : {-1.0, 1.0})
      for (double z : {-1.0, 1.0})
        legs.primitives.push_back(post({x * off, floor + leg_half, z * off}, lt, leg_half, round_legs));
    s.adjectives = {"round"};
  } else {
    const double tw = rng.uniform(0.55, 0.9), td = rng.uniform(0.35, 0.7);
    top.primitives.push_back(box({0.0, top_y, 0.0}, {tw, tt, td}));
    for (double x : {-1.0, 1.0})
      for (double z : {-1.0, 1.0})
        legs.primitives.push_back(post({x * (tw - 1.5 * lt), floor + leg_half, z * (td - 1.5 * lt)}, lt, leg_half,
                                       round_legs));
    s.adjectives = {"square"};
  }
  s.adjectives.push_back(top_y >= 0.25 ? "tall" : "short");
  s.parts = {top, legs};
  return s;
}

ShapeSpec build_aeroplane(Rng& rng) {
  ShapeSpec s;
  const double rb = rng.uniform(0.08, 0.13), lb = rng.uniform(0.75, 0.95);
  const double xw = rng.uniform(-0.1, 0.15), cw = rng.uniform(0.1, 0.2), span = rng.uniform(0.6, 0.92);
  const double fh = rng.uniform(0.14, 0.25), hs = rng.uniform(0.15, 0.3);
  Part body{"body", {}, {cylinder({0.0, 0.0, 0.0}, rb, lb, 0)}};
  Part wings{"wings", {}, {box({xw, 0.0, 0.0}, {cw, 0.02, span})}};
  const double tail_x = -lb + 0.09;
  Part tail{"tail",
            {},
            {box({tail_x, rb + fh, 0.0}, {0.08, fh, 0.015}), box({tail_x, rb * 0.5, 0.0}, {0.07, 0.015, hs})}};
  s.parts = {body, wings, tail};
  s.adjectives = {span >= 0.75 ? "wide" : "narrow"};
  return s;
}

ShapeSpec build_car(Rng& rng) {
  ShapeSpec s;
  const double bl = rng.uniform(0.75, 0.95), bh = rng.uniform(0.15, 0.22), bw = rng.uniform(0.35, 0.45);
  const double body_y = -0.2;
  const double cl = rng.uniform(0.3, 0.5), ch = rng.uniform(0.12, 0.2), cx = rng.uniform(-0.15, 0.1);
  const double wr = rng.uniform(0.12, 0.17);
  Part body{"body", {}, {box({0.0, body_y, 0.0}, {bl, bh, bw})}};
  Part cabin{"cabin", {}, {box({cx, body_y + bh + ch, 0.0}, {cl, ch, bw * 0.85})}};
  Part wheels{"wheels", {}, {}};
  for (double x : {-1.0, 1.0})
    for (double z : {-1.0, 1.0})
      wheels.primitives.push_back(cylinder({x * (bl - wr - 0.05), body_y - bh, z * bw}, wr, 0.05, 2));
  s.parts = {body, cabin, wheels};
  s.adjectives = {ch >= 0.16 ? "tall" : "short", bw >= 0.4 ? "wide" : "narrow"};
  return s;
}

Vec3 sample_on(const Primitive& p, Rng& rng) {
  if (p.kind == Primitive::Kind::Box) {
    const auto& h = p.half_extents;
    const std::array<double, 3> face_area{h[1] * h[2], h[0] * h[2], h[0] * h[1]};
    const double total = face_area[0] + face_area[1] + face_area[2];
    double pick = rng.uniform() * total;
    int axis = 2;
    for (int k = 0; k < 3; ++k) {
      if (pick < face_area[k]) {
        axis = k;
        break;
      }
      pick -= face_area[k];
    }
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Vec3 q;
    for (int k = 0; k < 3; ++k) q[k] = k == axis ? side * h[k] : rng.uniform(-h[k], h[k]);
    return {p.center[0] + q[0], p.center[1] + q[1], p.center[2] + q[2]};
  }
  const double lateral = 2.0 * p.radius * 2.0 * p.half_length;  // 2*pi common factor dropped
  const double caps = p.radius * p.radius;                        // two caps, pi dropped
  const double u = rng.uniform() * (lateral + caps);
  double h, rad, theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (u < lateral) {
    h = rng.uniform(-p.half_length, p.half_length);
    rad = p.radius;
  } else {
    h = rng.uniform() < 0.5 ? -p.half_length : p.half_length;
    rad = p.radius * std::sqrt(rng.uniform());
  }
  const int a = p.axis, b = (a + 1) % 3, c = (a + 2) % 3;
  Vec3 q{};
  q[a] = h;
  q[b] = rad * std::cos(theta);
  q[c] = rad * std::sin(theta);
  return {p.center[0] + q[0], p.center[1] + q[1], p.center[2] + q[2]};
}

// Largest-remainder apportionment of `total` by `weights`; ties go to the lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> q(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    q[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += q[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++q[rem[k % rem.size()].second];
  return q;
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Chair: return "chair";
    case Category::Table: return "table";
    case Category::Aeroplane: return "aeroplane";
    case Category::Car: return "car";
  }
  return "?";
}

Category parse_category(std::string_view name) {
  for (auto c : kAllCategories) {
    if (category_name(c) == name) return c;
  }
  throw ConfigError("unknown category '" + std::string(name) + "'");
}

std::size_t category_index(Category c) { return static_cast<std::size_t>(c); }

const std::vector<std::string>& part_names(Category c) {
  static const std::vector<std::string> chair{"seat", "back", "legs"};
  static const std::vector<std::string> table{"top", "legs"};
  static const std::vector<std::string> aeroplane{"body", "wings", "tail"};
  static const std::vector<std::string> car{"body", "cabin", "wheels"};
  switch (c) {
    case Category::Chair: return chair;
    case Category::Table: return table;
    case Category::Aeroplane: return aeroplane;
    case Category::Car: return car;
  }
  return chair;
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> p{
      {"red", rgb255(217, 38, 38)},     {"green", rgb255(38, 178, 64)},  {"blue", rgb255(38, 77, 217)},
      {"yellow", rgb255(242, 217, 38)}, {"orange", rgb255(242, 128, 13)}, {"purple", rgb255(140, 51, 178)},
      {"white", rgb255(242, 242, 242)}, {"black", rgb255(25, 25, 25)},
  };
  return p;
}

std::optional<std::string_view> color_word(const Rgb& rgb) {
  for (const auto& c : palette()) {
    if (c.rgb == rgb) return c.word;
  }
  return std::nullopt;
}

Rgb color_rgb(std::string_view word) {
  for (const auto& c : palette()) {
    if (c.word == word) return c.rgb;
  }
  throw ConfigError("unknown color word '" + std::string(word) + "'");
}

double Primitive::surface_area() const {
  if (kind == Kind::Box) {
    const auto& h = half_extents;
    return 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
  }
  return 2.0 * std::numbers::pi * radius * (2.0 * half_length) + 2.0 * std::numbers::pi * radius * radius;
}

double Primitive::surface_distance(const Vec3& p) const {
  if (kind == Kind::Box) {
    Vec3 d;
    bool inside = true;
    for (int k = 0; k < 3; ++k) {
      d[k] = std::abs(p[k] - center[k]) - half_extents[k];
      if (d[k] > 0.0) inside = false;
    }
    if (inside) return -std::max({d[0], d[1], d[2]});
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += std::max(d[k], 0.0) * std::max(d[k], 0.0);
    return std::sqrt(s);
  }
  const int a = axis, b = (a + 1) % 3, c = (a + 2) % 3;
  const double h = std::abs(p[a] - center[a]);
  const double rho = std::hypot(p[b] - center[b], p[c] - center[c]);
  const double dr = rho - radius, dh = h - half_length;
  if (dr <= 0.0 && dh <= 0.0) return std::min(-dr, -dh);
  return std::hypot(std::max(dr, 0.0), std::max(dh, 0.0));
}

void ShapeSpec::validate() const {
  if (parts.empty()) throw DataError("shape spec has no parts");
  for (const auto& part : parts) {
    if (part.primitives.empty()) throw DataError("part '" + part.name + "' has no primitive");
    for (double c : part.color) {
      if (!(c >= 0.0 && c <= 1.0)) throw DataError("part '" + part.name + "' color outside [0,1]");
    }
    for (const auto& p : part.primitives) {
      Vec3 ext = p.half_extents;
      if (p.kind == Primitive::Kind::Cylinder) {
        ext = {p.radius, p.radius, p.radius};
        ext[static_cast<std::size_t>(p.axis)] = p.half_length;
      }
      for (int k = 0; k < 3; ++k) {
        if (!(ext[k] > 0.0) || std::abs(p.center[k]) + ext[k] > 1.0 + 1e-12) {
          throw DataError("part '" + part.name + "' leaves the canonical cube");
        }
      }
    }
  }
}

namespace {

ColoredPointCloud sample_surface(const ShapeSpec& spec, std::size_t points, Rng& rng) {
  std::vector<double> part_area;
  for (const auto& part : spec.parts) {
    double a = 0.0;
    for (const auto& p : part.primitives) a += p.surface_area();
    part_area.push_back(a);
  }
  const auto part_quota = apportion(points, part_area);
  ColoredPointCloud raw;
  raw.g.reserve(points);
  for (std::size_t pi = 0; pi < spec.parts.size(); ++pi) {
    const auto& part = spec.parts[pi];
    std::vector<double> prim_area;
    for (const auto& p : part.primitives) prim_area.push_back(p.surface_area());
    const auto prim_quota = apportion(part_quota[pi], prim_area);
    for (std::size_t k = 0; k < part.primitives.size(); ++k) {
      for (std::size_t n = 0; n < prim_quota[k]; ++n) {
        raw.g.push_back(sample_on(part.primitives[k], rng));
        raw.a.push_back(part.color);
        raw.labels.push_back(static_cast<int>(pi));
      }
    }
  }
  return raw;
}

}  // namespace

GeneratedShape generate_shape(Category category, std::uint64_t seed, std::size_t points) {
  if (points == 0) throw ConfigError("generate_shape: point count must be positive");
  Rng rng(derive_seed(seed, category_index(category)));
  ShapeSpec spec;
  switch (category) {
    case Category::Chair: spec = build_chair(rng); break;
    case Category::Table: spec = build_table(rng); break;
    case Category::Aeroplane: spec = build_aeroplane(rng); break;
    case Category::Car: spec = build_car(rng); break;
  }
  spec.category = category;
  spec.seed = seed;
  const auto& pal = palette();
  for (auto& part : spec.parts) {
    part.color = pal[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pal.size()) - 1))].rgb;
  }
  spec.validate();

  const ColoredPointCloud raw = sample_surface(spec, points, rng);
  GeneratedShape out;
  out.cloud = normalize_cloud(raw, &spec.frame);
  out.spec = std::move(spec);
  return out;
}

ColoredPointCloud normalize_cloud(const ColoredPointCloud& cloud, Frame* frame) {
  const std::size_t n = cloud.size();
  if (n == 0) throw DataError("normalize_cloud: empty cloud");
  Vec3 mean{0.0, 0.0, 0.0};
  for (const auto& p : cloud.g)
    for (int k = 0; k < 3; ++k) mean[k] += p[k];
  for (auto& m : mean) m /= static_cast<double>(n);
  ColoredPointCloud out = cloud;
  double extent = 0.0;
  for (auto& p : out.g)
    for (int k = 0; k < 3; ++k) {
      p[k] -= mean[k];
      extent = std::max(extent, std::abs(p[k]));
    }
  if (!(extent > 0.0)) throw DataError("normalize_cloud: degenerate cloud (zero extent)");
  for (auto& p : out.g)
    for (auto& c : p) c /= extent;
  if (frame) {
    frame->center = mean;
    frame->scale = extent;
  }
  return out;
}

ColoredPointCloud resample_cloud(const ShapeSpec& spec, std::size_t points, std::uint64_t seed) {
  if (points == 0) throw ConfigError("resample_cloud: point count must be positive");
  Rng rng(seed);
  ColoredPointCloud cloud = sample_surface(spec, points, rng);
  for (auto& p : cloud.g)
    for (int k = 0; k < 3; ++k) p[k] = (p[k] - spec.frame.center[k]) / spec.frame.scale;
  return cloud;
}

ShapeSpec recolor(const ShapeSpec& spec, const std::vector<std::string>& words) {
  if (words.size() != spec.parts.size()) throw ConfigError("recolor: one color word per part required");
  ShapeSpec out = spec;
  for (std::size_t i = 0; i < words.size(); ++i) out.parts[i].color = color_rgb(words[i]);
  return out;
}

void apply_part_colors(const ShapeSpec& spec, ColoredPointCloud& cloud) {
  if (!cloud.has_labels()) throw ContractError("apply_part_colors: cloud has no labels");
  cloud.a.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto label = static_cast<std::size_t>(cloud.labels[i]);
    if (label >= spec.parts.size()) throw DataError("apply_part_colors: label out of range");
    cloud.a[i] = spec.parts[label].color;
  }
}

std::vector<std::string> canonical_color_words(Category c) {
  std::vector<std::string> words{"blue", "green", "red"};
  words.resize(part_names(c).size());
  return words;
}

}  // namespace sketchdiff::synth
