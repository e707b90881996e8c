#include <doctest.h>

#include <cmath>

#include "gradcheck_cases.hpp"
#include "sketchdiff/error.hpp"
#include "sketchdiff/fusion.hpp"

using namespace sketchdiff;
using nn::Shape;
using nn::Tensor;
using sketchdiff::testing::random_tensor;

namespace {

void set_identity(nn::Linear& l) {
  for (std::size_t i = 0; i < l.weight.size(); ++i) {
    l.weight.data()[i] = (i / l.out_features() == i % l.out_features()) ? 1.0 : 0.0;
  }
  if (l.bias.defined())
    for (auto& b : l.bias.data()) b = 0.0;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("identical keys give uniform weights and the projected mean value") {
    Rng rng(1);
    nn::MultiHeadAttention att(8, 8, 2, 4, 8, rng);
    auto q = random_tensor({1, 2, 8}, rng);
    auto key_row = random_tensor({1, 1, 8}, rng);
    auto k = nn::concat({key_row, key_row, key_row}, 1);
    auto v = random_tensor({1, 3, 8}, rng);
    auto out = mh_attention(att, q, k, v);
    for (double w : out.weights.values()) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    auto mean_v = nn::mean(v, 1);
    auto expect = att.wo(att.wv(mean_v));
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(out.out[r * 8 + c] == doctest::Approx(expect[c]).epsilon(1e-12));

    auto zero = mh_attention(att, q, k, Tensor::zeros({1, 3, 8}));
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(zero.out[r * 8 + c] == doctest::Approx(att.wo.bias[c]).epsilon(1e-14));
  }

  TEST_CASE("single head with identity projections returns T's value row") {
    Rng rng(2);
    FusionConfig cfg{1, 8, 1, 8};
    Fusion f(cfg, ConditionKind::Geometry, rng);
    set_identity(f.atten1.wq);
    set_identity(f.atten1.wk);
    set_identity(f.atten1.wv);
    set_identity(f.atten1.wo);
    auto s = random_tensor({1, 8}, rng), t = random_tensor({1, 8}, rng);
    auto out = f(s, t);
    for (std::size_t c = 0; c < 8; ++c) CHECK(out.intermediate[c] == doctest::Approx(t[c]).epsilon(1e-14));
    CHECK(out.weights1[0] == doctest::Approx(1.0));
  }

  TEST_CASE("switch: text absent means S alone decides") {
    Rng rng(3);
    Fusion f(FusionConfig{}, ConditionKind::Geometry, rng);
    auto s = random_tensor({2, 128}, rng);
    auto t1 = random_tensor({2, 128}, rng), t2 = random_tensor({2, 128}, rng);
    auto a = f(s, t1, {0, 0}), b = f(s, t2, {0, 0}), c = f(s, Tensor());
    CHECK(a.condition.values() == b.condition.values());
    CHECK(a.condition.values() == c.condition.values());
    for (double v : c.intermediate.values()) CHECK(v == 0.0);
    CHECK_FALSE(c.weights1.defined());

    // mixed rows: the text-free row matches a text-free call
    auto mixed = f(s, t1, {1, 0});
    for (std::size_t i = 0; i < 128; ++i) CHECK(mixed.condition[128 + i] == doctest::Approx(c.condition[128 + i]).epsilon(1e-13));
    auto with = f(s, t1);
    for (std::size_t i = 0; i < 128; ++i) CHECK(mixed.condition[i] == doctest::Approx(with.condition[i]).epsilon(1e-13));
    // one key per softmax: Atten2 returns wo(wv(S)) whatever I is
    for (std::size_t i = 0; i < 128; ++i) CHECK(with.condition[i] == doctest::Approx(c.condition[i]).epsilon(1e-12));
    double idiff = 0.0;
    for (std::size_t i = 0; i < 128; ++i) idiff = std::max(idiff, std::abs(with.intermediate[i] - f(s, t2).intermediate[i]));
    CHECK(idiff > 1e-6);
  }

  TEST_CASE("with several tokens the text reaches the condition") {
    Rng rng(6);
    Fusion f(FusionConfig{4, 32, 4, 8}, ConditionKind::Geometry, rng);
    auto s = random_tensor({1, 128}, rng), t = random_tensor({1, 128}, rng);
    auto with = f(s, t), without = f(s, Tensor());
    double diff = 0.0;
    for (std::size_t i = 0; i < 128; ++i) diff = std::max(diff, std::abs(with.condition[i] - without.condition[i]));
    CHECK(diff > 1e-6);
  }

  TEST_CASE("geometry and appearance parameter sets differ") {
    Rng rng(4);
    Fusion g(FusionConfig{}, ConditionKind::Geometry, rng);
    Fusion a(FusionConfig{}, ConditionKind::Appearance, rng);
    CHECK(g.kind() == ConditionKind::Geometry);
    CHECK(a.kind() == ConditionKind::Appearance);
    auto s = random_tensor({1, 128}, rng), t = random_tensor({1, 128}, rng);
    auto cg = g(s, t).condition, ca = a(s, t).condition;
    double diff = 0.0;
    for (std::size_t i = 0; i < 128; ++i) diff = std::max(diff, std::abs(cg[i] - ca[i]));
    CHECK(diff > 1e-6);
  }

  TEST_CASE("attention weights sum to one and shapes are checked") {
    Rng rng(5);
    Fusion f(FusionConfig{4, 32, 4, 8}, ConditionKind::Geometry, rng);
    auto out = f(random_tensor({3, 128}, rng), random_tensor({3, 128}, rng));
    CHECK(out.condition.shape() == Shape{3, 128});
    for (const auto* w : {&out.weights1, &out.weights2}) {
      REQUIRE(w->shape() == Shape{12, 4, 4});
      for (std::size_t r = 0; r < 48; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += (*w)[r * 4 + k];
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
    CHECK_THROWS_AS(f(random_tensor({2, 64}, rng), Tensor()), ConfigError);
    CHECK_THROWS_AS(f(random_tensor({2, 128}, rng), random_tensor({2, 64}, rng)), ConfigError);
  }

  TEST_CASE("gradient check through the fusion blocks") {
    auto r = sketchdiff::testing::gradcheck_fusion(8);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }
}
