#include "sketchdiff/synthdata/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "sketchdiff/error.hpp"

namespace sketchdiff::synth {

namespace {

constexpr int kCylinderSegments = 32;
constexpr double kDepthTolerance = 0.05;

struct Camera {
  std::array<Vec3, 3> rows;  // image-right, image-up, toward-viewer
  double zoom;
};

Camera camera_for(View view) {
  switch (view) {
    case View::Front: return {{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}, 0.55};
    case View::Side: return {{Vec3{0, 0, -1}, Vec3{0, 1, 0}, Vec3{1, 0, 0}}, 0.55};
    case View::Oblique: {
      const double yaw = 35.0 * std::numbers::pi / 180.0, pitch = 25.0 * std::numbers::pi / 180.0;
      const double cy = std::cos(yaw), sy = std::sin(yaw), cp = std::cos(pitch), sp = std::sin(pitch);
      return {{Vec3{cy, 0, sy}, Vec3{sp * sy, cp, -sp * cy}, Vec3{-cp * sy, sp, cp * cy}}, 0.4};
    }
  }
  return camera_for(View::Front);
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Projected point: pixel x (column), pixel y (row), depth (larger is nearer).
struct Projected {
  double x, y, depth;
};

class Rasterizer {
 public:
  Rasterizer(const Camera& cam, std::size_t w, std::size_t h)
      : cam_(cam), w_(w), h_(h), zbuf_(w * h, -std::numeric_limits<double>::infinity()), img_(w, h) {}

  Projected project(const Vec3& p) const {
    const double u = dot(cam_.rows[0], p) * cam_.zoom;
    const double v = dot(cam_.rows[1], p) * cam_.zoom;
    return {(u + 1.0) / 2.0 * static_cast<double>(w_ - 1), (1.0 - (v + 1.0) / 2.0) * static_cast<double>(h_ - 1),
            dot(cam_.rows[2], p) * cam_.zoom};
  }

  void triangle(const Vec3& a3, const Vec3& b3, const Vec3& c3) {
    const Projected a = project(a3), b = project(b3), c = project(c3);
    const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (std::abs(area) < 1e-12) return;
    const auto lo_x = static_cast<long>(std::max(0.0, std::floor(std::min({a.x, b.x, c.x}))));
    const auto hi_x = static_cast<long>(std::min<double>(static_cast<double>(w_ - 1), std::ceil(std::max({a.x, b.x, c.x}))));
    const auto lo_y = static_cast<long>(std::max(0.0, std::floor(std::min({a.y, b.y, c.y}))));
    const auto hi_y = static_cast<long>(std::min<double>(static_cast<double>(h_ - 1), std::ceil(std::max({a.y, b.y, c.y}))));
    for (long py = lo_y; py <= hi_y; ++py) {
      for (long px = lo_x; px <= hi_x; ++px) {
        const double x = static_cast<double>(px), y = static_cast<double>(py);
        const double w0 = ((b.x - x) * (c.y - y) - (b.y - y) * (c.x - x)) / area;
        const double w1 = ((c.x - x) * (a.y - y) - (c.y - y) * (a.x - x)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -1e-9 || w1 < -1e-9 || w2 < -1e-9) continue;
        const double z = w0 * a.depth + w1 * b.depth + w2 * c.depth;
        double& zb = zbuf_[static_cast<std::size_t>(py) * w_ + static_cast<std::size_t>(px)];
        zb = std::max(zb, z);
      }
    }
  }

  void quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    triangle(a, b, c);
    triangle(a, c, d);
  }

  void edge(const Vec3& a3, const Vec3& b3) { edges_.emplace_back(a3, b3); }

  SketchImage finish() {
    for (const auto& [a3, b3] : edges_) {
      const Projected a = project(a3), b = project(b3);
      const double len = std::hypot(b.x - a.x, b.y - a.y);
      const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.3)));
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const long px = std::lround(a.x + t * (b.x - a.x));
        const long py = std::lround(a.y + t * (b.y - a.y));
        if (px < 0 || py < 0 || px >= static_cast<long>(w_) || py >= static_cast<long>(h_)) continue;
        const double z = a.depth + t * (b.depth - a.depth);
        const std::size_t idx = static_cast<std::size_t>(py) * w_ + static_cast<std::size_t>(px);
        if (z >= zbuf_[idx] - kDepthTolerance) img_.pixels[idx] = 1.0;
      }
    }
    return std::move(img_);
  }

 private:
  Camera cam_;
  std::size_t w_, h_;
  std::vector<double> zbuf_;
  SketchImage img_;
  std::vector<std::pair<Vec3, Vec3>> edges_;
};

void add_box(Rasterizer& r, const Primitive& p) {
  std::array<Vec3, 8> v;
  for (int i = 0; i < 8; ++i) {
    for (int k = 0; k < 3; ++k) v[i][k] = p.center[k] + ((i >> k) & 1 ? 1.0 : -1.0) * p.half_extents[k];
  }
  // faces as corner index quads
  const int faces[6][4] = {{0, 2, 6, 4}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 5, 7, 6}};
  for (const auto& f : faces) r.quad(v[f[0]], v[f[1]], v[f[2]], v[f[3]]);
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < 3; ++k) {
      const int j = i | (1 << k);
      if (j != i) r.edge(v[i], v[j]);
    }
}

void add_cylinder(Rasterizer& r, const Primitive& p, const Vec3& view_dir) {
  const int a = p.axis, b = (a + 1) % 3, c = (a + 2) % 3;
  auto point = [&](double theta, double h) {
    Vec3 q = p.center;
    q[a] += h;
    q[b] += p.radius * std::cos(theta);
    q[c] += p.radius * std::sin(theta);
    return q;
  };
  const double step = 2.0 * std::numbers::pi / kCylinderSegments;
  Vec3 top = p.center, bottom = p.center;
  top[a] += p.half_length;
  bottom[a] -= p.half_length;
  for (int s = 0; s < kCylinderSegments; ++s) {
    const double t0 = s * step, t1 = (s + 1) * step;
    const Vec3 b0 = point(t0, -p.half_length), b1 = point(t1, -p.half_length);
    const Vec3 u0 = point(t0, p.half_length), u1 = point(t1, p.half_length);
    r.quad(b0, b1, u1, u0);
    r.triangle(bottom, b0, b1);
    r.triangle(top, u0, u1);
    r.edge(b0, b1);
    r.edge(u0, u1);
  }
  // silhouette generators where the surface normal is perpendicular to the view
  const double db = view_dir[b], dc = view_dir[c];
  if (std::hypot(db, dc) > 1e-6) {
    const double theta = std::atan2(-db, dc);
    for (double t : {theta, theta + std::numbers::pi}) r.edge(point(t, -p.half_length), point(t, p.half_length));
  }
}

}  // namespace

std::size_t SketchImage::ink_pixels() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](double v) { return v > 0.5; }));
}

double SketchImage::ink_fraction() const {
  return pixels.empty() ? 0.0 : static_cast<double>(ink_pixels()) / static_cast<double>(pixels.size());
}

std::string_view view_name(View v) {
  switch (v) {
    case View::Front: return "front";
    case View::Side: return "side";
    case View::Oblique: return "oblique";
  }
  return "?";
}

View parse_view(std::string_view name) {
  for (auto v : {View::Front, View::Side, View::Oblique}) {
    if (view_name(v) == name) return v;
  }
  throw ConfigError("unknown view '" + std::string(name) + "'");
}

SketchImage render_sketch(const ShapeSpec& spec, View view, std::size_t width, std::size_t height) {
  if (width < 16 || height < 16) throw ConfigError("render_sketch: sketch must be at least 16x16");
  const Camera cam = camera_for(view);
  Rasterizer r(cam, width, height);
  for (const auto& part : spec.parts) {
    for (const auto& p : part.primitives) {
      if (p.kind == Primitive::Kind::Box) {
        add_box(r, p);
      } else {
        add_cylinder(r, p, cam.rows[2]);
      }
    }
  }
  return r.finish();
}

}  // namespace sketchdiff::synth
