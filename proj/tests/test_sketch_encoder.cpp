#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gradcheck_cases.hpp"
#include "sketchdiff/error.hpp"
#include "sketchdiff/sketch_encoder.hpp"
#include "sketchdiff/synthdata/dataset_io.hpp"
#include "support.hpp"

using namespace sketchdiff;
using nn::Shape;
using nn::Tensor;
using sketchdiff::testing::random_tensor;

namespace {

SketchEncoderConfig small_config() {
  SketchEncoderConfig cfg;
  cfg.input_size = 32;
  return cfg;
}

Tensor image_of(const synth::SketchImage& s) { return sketch_batch({&s}, s.width); }

// input rows that a stage-k output row reads, by replicate-padded 3x3 stride 2
std::set<std::size_t> rows_reaching(std::size_t input_row, std::size_t size, std::size_t stages,
                                    std::set<std::size_t>* touched_at_output) {
  std::set<std::size_t> cur{input_row};
  std::size_t n = size;
  for (std::size_t s = 0; s < stages; ++s) {
    std::set<std::size_t> next;
    const std::size_t out = n / 2;
    for (std::size_t o = 0; o < out; ++o)
      for (long k = 0; k < 3; ++k) {
        const long r = std::clamp(static_cast<long>(2 * o) - 1 + k, 0L, static_cast<long>(n) - 1);
        if (cur.count(static_cast<std::size_t>(r))) next.insert(o);
      }
    cur = next;
    n = out;
  }
  *touched_at_output = cur;
  return cur;
}

}  // namespace

TEST_SUITE("sketch_encoder") {
  TEST_CASE("default encoder shapes") {
    Rng rng(1);
    SketchEncoder enc(SketchEncoderConfig{}, rng);
    synth::SketchImage s(64, 64);
    s.at(10, 10) = 1.0;
    auto fmap = enc.cnn_embed(image_of(s));
    CHECK(fmap.shape() == Shape{1, 128, 8, 8});
    auto u = enc.primary_caps(fmap, false);
    CHECK(u.shape() == Shape{1, 8, 16, 16});
    auto f = enc.encode(s);
    CHECK(f.embedding.shape() == Shape{1, 128});
    CHECK(SketchEncoderConfig{}.embedding_dim() == 8 * 16);
    for (double v : f.embedding.values()) CHECK(std::isfinite(v));
    auto again = enc.encode(s);
    CHECK(again.embedding.values() == f.embedding.values());
    synth::SketchImage wrong(32, 32);
    CHECK_THROWS_AS(enc.encode(wrong), ConfigError);
  }

  TEST_CASE("zero sketch gives a spatially constant feature map") {
    Rng rng(2);
    SketchEncoder enc(small_config(), rng);
    synth::SketchImage s(32, 32);
    auto fmap = enc.cnn_embed(image_of(s));
    const std::size_t c = fmap.dim(1), p = fmap.dim(2) * fmap.dim(3);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 1; q < p; ++q) CHECK(fmap[ch * p + q] == doctest::Approx(fmap[ch * p]).epsilon(1e-14));
    auto u = enc.primary_caps(Tensor::zeros(fmap.shape()), false);
    const std::size_t sites = u.dim(3);
    for (std::size_t k = 0; k < u.size(); k += sites)
      for (std::size_t q = 1; q < sites; ++q) CHECK(u[k + q] == u[k]);
  }

  TEST_CASE("a one-pixel change stays inside its receptive field") {
    Rng rng(3);
    SketchEncoder enc(small_config(), rng);
    synth::SketchImage a(32, 32);
    a.at(5, 20) = 1.0;
    a.at(25, 3) = 1.0;
    auto b = a;
    b.at(13, 9) = 1.0;
    auto fa = enc.cnn_embed(image_of(a)), fb = enc.cnn_embed(image_of(b));
    std::set<std::size_t> rows, cols;
    rows_reaching(13, 32, 3, &rows);
    rows_reaching(9, 32, 3, &cols);
    const std::size_t h = fa.dim(2), w = fa.dim(3);
    bool changed_inside = false;
    for (std::size_t ch = 0; ch < fa.dim(1); ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t k = (ch * h + i) * w + j;
          if (rows.count(i) && cols.count(j)) {
            changed_inside = changed_inside || fa[k] != fb[k];
          } else {
            CHECK(fa[k] == fb[k]);
          }
        }
    CHECK(changed_inside);
  }

  TEST_CASE("identity capsule transform with unit batch norm") {
    Rng rng(4);
    auto cfg = small_config();
    SketchEncoder enc(cfg, rng);
    auto& w = enc.caps_transform.weight;
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = (i / 16 == i % 16) ? 1.0 : 0.0;
    for (auto& v : enc.caps_transform.bias.data()) v = 0.0;
    auto fmap = random_tensor({1, 128, 4, 4}, rng);
    auto u = enc.primary_caps(fmap, false);
    REQUIRE(u.shape() == Shape{1, 8, 16, 4});
    const double bn = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t ch = 0; ch < 128; ++ch)
      for (std::size_t oi = 0; oi < 2; ++oi)
        for (std::size_t oj = 0; oj < 2; ++oj) {
          double m = 0.0;
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 2; ++dj) m = std::max(m, fmap[(ch * 4 + 2 * oi + di) * 4 + 2 * oj + dj]);
          CHECK(u[ch * 4 + oi * 2 + oj] == doctest::Approx(m * bn).epsilon(1e-12));
        }
  }

  TEST_CASE("zero sketch with zero biases embeds to zero") {
    Rng rng(5);
    SketchEncoder enc(small_config(), rng);
    nn::TensorList params;
    enc.collect("e", params);
    for (auto& p : params) {
      if (p.name.find("bias") != std::string::npos || p.name.find("beta") != std::string::npos) {
        for (auto& v : p.tensor.data()) v = 0.0;
      }
    }
    synth::SketchImage s(32, 32);
    const auto f = enc.encode(s);
    for (double v : f.embedding.values()) CHECK(v == 0.0);
  }

  TEST_CASE("one routing round with unit attention averages the inputs") {
    Rng rng(6);
    auto u = random_tensor({1, 4, 3, 2}, rng);
    auto a = Tensor::full({1, 4, 4, 3}, 1.0);
    auto st = attention_routing(u, a, 1);
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t p = 0; p < 2; ++p) {
          double s = 0.0;
          for (std::size_t i = 0; i < 4; ++i) s += 0.25 * u[(i * 3 + d) * 2 + p];
          CHECK(st.s[(j * 3 + d) * 2 + p] == doctest::Approx(s).epsilon(1e-13));
        }
    auto v = nn::squash(st.s, 2);
    CHECK(st.v.values() == v.values());
  }

  TEST_CASE("a dominant capsule's routing coefficient grows every round") {
    // capsule 0 carries all the signal and a^{00} > a^{01}
    auto u = Tensor::from({1, 2, 3, 1}, {1.0, 0.5, 0.2, 0.0, 0.0, 0.0});
    auto a = Tensor::from({1, 2, 2, 3}, {1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
    auto st = attention_routing(u, a, 4);
    REQUIRE(st.routing.size() == 4);
    // hand-simulated agreement update for the two-capsule system
    double b0 = 0.0, b1 = 0.0;
    const double n2 = 1.0 + 0.25 + 0.04;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c0 = std::exp(b0) / (std::exp(b0) + std::exp(b1));
      CHECK(st.routing[r][0] == doctest::Approx(c0).epsilon(1e-12));
      if (r > 0) CHECK(st.routing[r][0] > st.routing[r - 1][0]);
      // s^0 = c0 * u, s^1 = (1-c0) * 0.5 u; agreement <squash(s^j), a^{0j} u>
      const double s0 = c0 * std::sqrt(n2), s1 = (1 - c0) * 0.5 * std::sqrt(n2);
      b0 += s0 * s0 / (1 + s0 * s0) * std::sqrt(n2);
      b1 += s1 * s1 / (1 + s1 * s1) * 0.5 * std::sqrt(n2);
    }
  }

  TEST_CASE("routing coefficients sum to one and squashed norms stay below one") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      auto u = random_tensor({2, 5, 4, 3}, rng, 1.0 + trial);
      auto a = random_tensor({2, 5, 5, 4}, rng);
      auto st = attention_routing(u, a, 3);
      for (const auto& c : st.routing)
        for (std::size_t b = 0; b < 2; ++b)
          for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t p = 0; p < 3; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < 5; ++j) s += c[((b * 5 + i) * 5 + j) * 3 + p];
              CHECK(std::abs(s - 1.0) < 1e-12);
            }
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < 5; ++j)
          for (std::size_t p = 0; p < 3; ++p) {
            double n2 = 0.0;
            for (std::size_t d = 0; d < 4; ++d) n2 += std::pow(st.v[((b * 5 + j) * 4 + d) * 3 + p], 2);
            CHECK(n2 < 1.0);
          }
    }
  }

  TEST_CASE("instance scores") {
    synth::SketchImage s(64, 64);
    for (std::size_t i = 0; i < 44; ++i) s.pixels[i * 37] = 1.0;
    CapsuleStack st;
    st.attention = Tensor::full({1, 8, 8, 16}, 0.3);
    st.routing.push_back(Tensor::full({1, 8, 8, 4}, 0.125));
    auto sc = instance_scores(s, st);
    CHECK(sc.iss == doctest::Approx(100.0 * 44 / 4096));
    CHECK(sc.iss == doctest::Approx(1.07).epsilon(0.005));
    CHECK(sc.isc == doctest::Approx(12.5).epsilon(1e-12));

    // all attention of each dimension on one capsule gives 100%
    std::vector<double> peaked(8 * 8 * 16, 0.0);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t d = 0; d < 16; ++d) peaked[(i * 8 + (d % 8)) * 16 + d] = 1.0;
    st.attention = Tensor::from({1, 8, 8, 16}, peaked);
    CHECK(instance_scores(s, st).isc == doctest::Approx(100.0));
  }

  TEST_CASE("attention dump writes heatmaps and scores") {
    Rng rng(8);
    SketchEncoder enc(small_config(), rng);
    auto shape = synth::generate_shape(synth::Category::Chair, 3, 64);
    auto sketch = synth::render_sketch(shape.spec, synth::View::Oblique, 32, 32);
    auto f = enc.encode(sketch);
    auto dir = std::filesystem::temp_directory_path() / "sketchdiff_test_dump";
    std::filesystem::remove_all(dir);
    dump_attention(dir, sketch, f.stack);
    for (int j = 0; j < 8; ++j) {
      auto img = synth::read_pgm(dir / ("capsule_" + std::to_string(j) + ".pgm"));
      CHECK(img.width == 32);
    }
    CHECK(std::filesystem::exists(dir / "scores.txt"));
  }

  TEST_CASE("gradient check through the sketch encoder") {
    auto r = sketchdiff::testing::gradcheck_sketch_encoder(6);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }
}
