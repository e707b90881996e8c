#include "sketchdiff/synthdata/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "sketchdiff/error.hpp"
#include "sketchdiff/parallel.hpp"
#include "sketchdiff/rng.hpp"

namespace sketchdiff::synth {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
  return buf;
}

double parse_double(const std::string& file, std::size_t line, const std::string& field, const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) throw ParseError(file, line, field, "not a number: '" + text + "'");
  return v;
}

template <typename Int = long long>
Int parse_int(const std::string& file, std::size_t line, const std::string& field, const std::string& text) {
  Int v = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParseError(file, line, field, "not an integer: '" + text + "'");
  return v;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

// Keyed view over a key = value file with error reporting.
class KeyValueFile {
 public:
  explicit KeyValueFile(const fs::path& path) : file_(path.string()) {
    for (auto& kv : read_key_values(path)) {
      if (entries_.count(kv.key)) throw ParseError(file_, kv.line, kv.key, "duplicate key");
      last_line_ = kv.line;
      entries_[kv.key] = {kv.line, kv.value};
    }
  }
  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& get(const std::string& key) const { return entry(key).second; }
  std::size_t line(const std::string& key) const { return entry(key).first; }
  double number(const std::string& key) const { return parse_double(file_, line(key), key, get(key)); }
  long long integer(const std::string& key) const { return parse_int(file_, line(key), key, get(key)); }
  std::uint64_t unsigned_integer(const std::string& key) const {
    return parse_int<std::uint64_t>(file_, line(key), key, get(key));
  }
  std::vector<double> numbers(const std::string& key, std::size_t expect) const {
    auto words = split_ws(get(key));
    if (words.size() != expect) {
      throw ParseError(file_, line(key), key, "expected " + std::to_string(expect) + " values, got " +
                                                  std::to_string(words.size()));
    }
    std::vector<double> out;
    for (auto& w : words) out.push_back(parse_double(file_, line(key), key, w));
    return out;
  }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ParseError(file_, has(key) ? line(key) : last_line_, key, what);
  }
  const std::string& file() const { return file_; }

 private:
  const std::pair<std::size_t, std::string>& entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError(file_, last_line_, key, "missing key");
    return it->second;
  }

  std::string file_;
  std::map<std::string, std::pair<std::size_t, std::string>> entries_;
  std::size_t last_line_ = 0;
};

std::string color_bytes(const Rgb& c) {
  std::string s;
  for (int k = 0; k < 3; ++k) {
    if (k) s += " ";
    s += std::to_string(static_cast<int>(std::lround(c[k] * 255.0)));
  }
  return s;
}

std::string item_stem(const fs::path& root, const std::string& split, const std::string& id) {
  return (root / split / id).string();
}

}  // namespace

void write_ply(const fs::path& path, const ColoredPointCloud& cloud, bool with_color) {
  auto out = open_out(path);
  const bool labels = cloud.has_labels();
  if (with_color && cloud.a.size() != cloud.size()) throw ContractError("write_ply: color count mismatch");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (with_color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (labels) out << "property int label\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out << fmt_float(cloud.g[i][0]) << ' ' << fmt_float(cloud.g[i][1]) << ' ' << fmt_float(cloud.g[i][2]);
    if (with_color) {
      for (int k = 0; k < 3; ++k) out << ' ' << std::lround(std::clamp(cloud.a[i][k], 0.0, 1.0) * 255.0);
    }
    if (labels) out << ' ' << cloud.labels[i];
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

ColoredPointCloud read_ply(const fs::path& path) {
  auto in = open_in(path);
  const std::string file = path.string();
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](const std::string& field) {
    if (!std::getline(in, line)) throw ParseError(file, lineno + 1, field, "unexpected end of file");
    ++lineno;
    line = trim(line);
  };
  next("magic");
  if (line != "ply") throw ParseError(file, lineno, "magic", "expected 'ply'");
  next("format");
  if (line != "format ascii 1.0") throw ParseError(file, lineno, "format", "only 'format ascii 1.0' is supported");
  std::size_t count = 0;
  bool have_count = false;
  std::vector<std::string> props;
  for (;;) {
    next("header");
    if (line == "end_header") break;
    auto w = split_ws(line);
    if (w.empty() || w[0] == "comment") continue;
    if (w[0] == "element") {
      if (w.size() != 3 || w[1] != "vertex") throw ParseError(file, lineno, "element", "only 'element vertex N' is supported");
      count = static_cast<std::size_t>(parse_int(file, lineno, "element vertex", w[2]));
      have_count = true;
    } else if (w[0] == "property") {
      if (w.size() != 3) throw ParseError(file, lineno, "property", "malformed property line");
      props.push_back(w[2]);
    } else {
      throw ParseError(file, lineno, "header", "unexpected line '" + line + "'");
    }
  }
  if (!have_count) throw ParseError(file, lineno, "element vertex", "missing vertex count");
  auto find = [&](const std::string& name) -> int {
    auto it = std::find(props.begin(), props.end(), name);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  const int ir = find("red"), ig = find("green"), ib = find("blue"), il = find("label");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError(file, lineno, "property", "x, y and z are required");
  const bool color = ir >= 0 && ig >= 0 && ib >= 0;
  ColoredPointCloud cloud;
  cloud.g.reserve(count);
  for (std::size_t v = 0; v < count; ++v) {
    next("vertex " + std::to_string(v));
    auto w = split_ws(line);
    if (w.size() != props.size()) {
      throw ParseError(file, lineno, "vertex " + std::to_string(v),
                       "expected " + std::to_string(props.size()) + " values, got " + std::to_string(w.size()));
    }
    auto coord = [&](int k, const char* name) {
      return static_cast<double>(static_cast<float>(parse_double(file, lineno, name, w[static_cast<std::size_t>(k)])));
    };
    cloud.g.push_back({coord(ix, "x"), coord(iy, "y"), coord(iz, "z")});
    if (color) {
      Rgb c;
      const int idx[3] = {ir, ig, ib};
      const char* names[3] = {"red", "green", "blue"};
      for (int k = 0; k < 3; ++k) {
        const auto b = parse_int(file, lineno, names[k], w[static_cast<std::size_t>(idx[k])]);
        if (b < 0 || b > 255) throw ParseError(file, lineno, names[k], "color outside 0..255");
        c[k] = static_cast<double>(b) / 255.0;
      }
      cloud.a.push_back(c);
    }
    if (il >= 0) {
      const auto l = parse_int(file, lineno, "label", w[static_cast<std::size_t>(il)]);
      if (l < 0) throw ParseError(file, lineno, "label", "negative label");
      cloud.labels.push_back(static_cast<int>(l));
    }
  }
  return cloud;
}

void write_pgm(const fs::path& path, const SketchImage& image) {
  auto out = open_out(path, true);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

SketchImage read_pgm(const fs::path& path) {
  auto in = open_in(path, true);
  const std::string file = path.string();
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  // header tokens may be separated by any whitespace; '#' starts a comment
  auto token = [&](const std::string& field) {
    std::string t;
    for (;;) {
      int c = in.get();
      if (c == EOF) throw ParseError(file, 1, field, "unexpected end of header");
      if (c == '#') {
        while (c != '\n' && c != EOF) c = in.get();
        continue;
      }
      if (std::isspace(c)) {
        if (!t.empty()) return t;
        continue;
      }
      t.push_back(static_cast<char>(c));
    }
  };
  magic = token("magic");
  if (magic != "P5") throw ParseError(file, 1, "magic", "expected P5");
  w = static_cast<std::size_t>(parse_int(file, 1, "width", token("width")));
  h = static_cast<std::size_t>(parse_int(file, 1, "height", token("height")));
  maxval = static_cast<int>(parse_int(file, 1, "maxval", token("maxval")));
  if (w == 0 || h == 0) throw ParseError(file, 1, "size", "zero image dimension");
  if (maxval <= 0 || maxval > 255) throw ParseError(file, 1, "maxval", "only 8-bit PGM is supported");
  std::string bytes(w * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ParseError(file, 2, "pixels", "truncated pixel data");
  SketchImage img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.pixels[i] = std::clamp(static_cast<unsigned char>(bytes[i]) / static_cast<double>(maxval), 0.0, 1.0);
  }
  return img;
}

std::vector<KeyValueLine> read_key_values(const fs::path& path) {
  auto in = open_in(path);
  std::vector<KeyValueLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), lineno, t, "expected 'key = value'");
    out.push_back({lineno, trim(t.substr(0, eq)), trim(t.substr(eq + 1))});
  }
  return out;
}

void write_spec(const fs::path& path, const ShapeSpec& spec) {
  auto out = open_out(path);
  out << "category = " << category_name(spec.category) << "\n";
  out << "seed = " << spec.seed << "\n";
  out << "frame.center = " << fmt_double(spec.frame.center[0]) << ' ' << fmt_double(spec.frame.center[1]) << ' '
      << fmt_double(spec.frame.center[2]) << "\n";
  out << "frame.scale = " << fmt_double(spec.frame.scale) << "\n";
  out << "adjectives =";
  for (const auto& a : spec.adjectives) out << ' ' << a;
  out << "\nparts = " << spec.parts.size() << "\n";
  for (std::size_t i = 0; i < spec.parts.size(); ++i) {
    const auto& part = spec.parts[i];
    const std::string key = "part." + std::to_string(i);
    out << key << ".name = " << part.name << "\n";
    out << key << ".color = " << color_bytes(part.color) << "\n";
    out << key << ".primitives = " << part.primitives.size() << "\n";
    for (std::size_t k = 0; k < part.primitives.size(); ++k) {
      const auto& p = part.primitives[k];
      out << key << ".prim." << k << " = ";
      if (p.kind == Primitive::Kind::Box) {
        out << "box";
        for (double v : p.center) out << ' ' << fmt_double(v);
        for (double v : p.half_extents) out << ' ' << fmt_double(v);
      } else {
        out << "cylinder";
        for (double v : p.center) out << ' ' << fmt_double(v);
        out << ' ' << fmt_double(p.radius) << ' ' << fmt_double(p.half_length) << ' ' << p.axis;
      }
      out << "\n";
    }
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

ShapeSpec read_spec(const fs::path& path) {
  KeyValueFile kv(path);
  ShapeSpec spec;
  try {
    spec.category = parse_category(kv.get("category"));
  } catch (const ConfigError& e) {
    kv.fail("category", e.what());
  }
  spec.seed = kv.unsigned_integer("seed");
  auto c = kv.numbers("frame.center", 3);
  spec.frame.center = {c[0], c[1], c[2]};
  spec.frame.scale = kv.number("frame.scale");
  if (!(spec.frame.scale > 0.0)) kv.fail("frame.scale", "scale must be positive");
  spec.adjectives = split_ws(kv.get("adjectives"));
  const auto nparts = kv.integer("parts");
  if (nparts != static_cast<long long>(part_names(spec.category).size())) {
    kv.fail("parts", "category " + std::string(category_name(spec.category)) + " needs " +
                         std::to_string(part_names(spec.category).size()) + " parts");
  }
  for (long long i = 0; i < nparts; ++i) {
    const std::string key = "part." + std::to_string(i);
    Part part;
    part.name = kv.get(key + ".name");
    if (part.name != part_names(spec.category)[static_cast<std::size_t>(i)]) kv.fail(key + ".name", "unexpected part name");
    auto rgb = kv.numbers(key + ".color", 3);
    for (int k = 0; k < 3; ++k) {
      if (rgb[k] < 0 || rgb[k] > 255 || rgb[k] != std::floor(rgb[k])) kv.fail(key + ".color", "color must be 0..255 integers");
      part.color[k] = rgb[k] / 255.0;
    }
    const auto nprim = kv.integer(key + ".primitives");
    if (nprim < 1) kv.fail(key + ".primitives", "a part needs at least one primitive");
    for (long long k = 0; k < nprim; ++k) {
      const std::string pk = key + ".prim." + std::to_string(k);
      auto words = split_ws(kv.get(pk));
      Primitive p;
      std::vector<double> v;
      auto nums = [&](std::size_t n) {
        if (words.size() != n + 1) kv.fail(pk, "expected " + std::to_string(n) + " numbers");
        for (std::size_t j = 1; j < words.size(); ++j) v.push_back(parse_double(kv.file(), kv.line(pk), pk, words[j]));
      };
      if (!words.empty() && words[0] == "box") {
        nums(6);
        p.kind = Primitive::Kind::Box;
        p.center = {v[0], v[1], v[2]};
        p.half_extents = {v[3], v[4], v[5]};
      } else if (!words.empty() && words[0] == "cylinder") {
        nums(6);
        p.kind = Primitive::Kind::Cylinder;
        p.center = {v[0], v[1], v[2]};
        p.radius = v[3];
        p.half_length = v[4];
        if (v[5] != 0.0 && v[5] != 1.0 && v[5] != 2.0) kv.fail(pk, "cylinder axis must be 0, 1 or 2");
        p.axis = static_cast<int>(v[5]);
      } else {
        kv.fail(pk, "primitive must be 'box' or 'cylinder'");
      }
      part.primitives.push_back(p);
    }
    spec.parts.push_back(std::move(part));
  }
  try {
    spec.validate();
  } catch (const DataError& e) {
    kv.fail("parts", e.what());
  }
  return spec;
}

void write_prompt(const fs::path& path, const std::optional<TextPrompt>& prompt) {
  auto out = open_out(path);
  if (!prompt) {
    out << "mode = none\n";
    return;
  }
  out << "mode = " << text_mode_name(prompt->mode) << "\n";
  out << "text = " << prompt->text << "\n";
  out << "category = " << category_name(prompt->attributes.category) << "\n";
  out << "colors =";
  for (const auto& c : prompt->attributes.part_colors) out << ' ' << c;
  out << "\nadjectives =";
  for (const auto& a : prompt->attributes.adjectives) out << ' ' << a;
  out << "\n";
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::optional<TextPrompt> read_prompt(const fs::path& path) {
  KeyValueFile kv(path);
  TextMode mode;
  try {
    mode = parse_text_mode(kv.get("mode"));
  } catch (const ConfigError& e) {
    kv.fail("mode", e.what());
  }
  if (mode == TextMode::None) return std::nullopt;
  TextPrompt p;
  p.mode = mode;
  p.text = kv.get("text");
  try {
    p.attributes.category = parse_category(kv.get("category"));
  } catch (const ConfigError& e) {
    kv.fail("category", e.what());
  }
  p.attributes.part_colors = split_ws(kv.get("colors"));
  p.attributes.adjectives = kv.has("adjectives") ? split_ws(kv.get("adjectives")) : std::vector<std::string>{};
  std::string expected;
  try {
    for (const auto& c : p.attributes.part_colors) color_rgb(c);
    expected = render_template(p.attributes);
  } catch (const ConfigError& e) {
    kv.fail("colors", e.what());
  }
  if (expected != p.text) kv.fail("text", "text does not match its attributes (expected '" + expected + "')");
  return p;
}

void write_item(const fs::path& root, const DatasetItem& item) {
  const std::string stem = item_stem(root, item.split, item.id);
  write_ply(stem + ".ply", item.cloud);
  write_pgm(stem + ".pgm", item.sketch);
  write_prompt(stem + ".txt", item.prompt);
  write_spec(stem + ".spec", item.spec);
}

DatasetItem read_item(const fs::path& root, const std::string& split, const std::string& id) {
  const std::string stem = item_stem(root, split, id);
  DatasetItem item;
  item.split = split;
  item.id = id;
  item.spec = read_spec(stem + ".spec");
  item.cloud = read_ply(stem + ".ply");
  item.sketch = read_pgm(stem + ".pgm");
  item.prompt = read_prompt(stem + ".txt");
  const std::string ply = stem + ".ply";
  if (item.cloud.has_labels()) {
    if (item.cloud.a.size() != item.cloud.size()) throw ParseError(ply, 0, "red", "labeled cloud needs colors");
    for (std::size_t i = 0; i < item.cloud.size(); ++i) {
      const auto l = static_cast<std::size_t>(item.cloud.labels[i]);
      if (l >= item.spec.parts.size()) throw ParseError(ply, i + 1, "label", "label indexes no part of the spec");
      if (item.cloud.a[i] != item.spec.parts[l].color) throw ParseError(ply, i + 1, "red", "point color differs from its part color");
    }
  }
  if (item.prompt && item.prompt->attributes.category != item.spec.category) {
    throw ParseError(stem + ".txt", 0, "category", "prompt category differs from the spec");
  }
  return item;
}

std::vector<DatasetItem> read_dataset(const fs::path& root, const std::optional<std::string>& split) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const std::string s = dir.path().filename().string();
    if (split && s != *split) continue;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (f.path().extension() == ".spec") keys.emplace_back(s, f.path().stem().string());
    }
  }
  std::sort(keys.begin(), keys.end());
  std::vector<DatasetItem> items;
  items.reserve(keys.size());
  for (const auto& [s, id] : keys) items.push_back(read_item(root, s, id));
  return items;
}

DatasetItem make_item(Category category, std::uint64_t shape_seed, const DatasetRequest& request) {
  DatasetItem item;
  auto shape = generate_shape(category, shape_seed, request.points);
  item.spec = std::move(shape.spec);
  item.cloud = std::move(shape.cloud);
  item.sketch = render_sketch(item.spec, request.view, request.sketch_size, request.sketch_size);
  item.prompt = generate_text(item.spec, request.text_mode, shape_seed);
  return item;
}

std::vector<DatasetItem> generate_dataset(const DatasetRequest& request) {
  if (request.categories.empty()) throw ConfigError("generate_dataset: no categories");
  if (request.test_fraction < 0.0 || request.test_fraction > 1.0) throw ConfigError("test fraction must be in [0,1]");
  std::vector<DatasetItem> items(request.count);
  const auto n_test = static_cast<std::size_t>(std::lround(static_cast<double>(request.count) * request.test_fraction));
  parallel_for(request.count, request.threads, [&](std::size_t k) {
    const Category cat = request.categories[k % request.categories.size()];
    items[k] = make_item(cat, derive_seed(request.seed, k), request);
    char id[16];
    std::snprintf(id, sizeof id, "%06zu", k);
    items[k].id = id;
    items[k].split = k + n_test >= request.count ? "test" : "train";
  });
  return items;
}

}  // namespace sketchdiff::synth
