#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck_cases.hpp"
#include "sketchdiff/error.hpp"
#include "sketchdiff/synthdata/text.hpp"
#include "sketchdiff/text_encoder.hpp"

using namespace sketchdiff;
using nn::Shape;

TEST_SUITE("text_encoder") {
  TEST_CASE("tokenize") {
    const auto& v = Vocabulary::builtin();
    auto t = tokenize("a red chair", v, 3);
    CHECK(t.ids == std::vector<std::size_t>{v.id("a"), v.id("red"), v.id("chair")});
    CHECK(t.length() == 3);
    auto upper = tokenize("A  RED\tchair", v, 3);
    CHECK(upper.ids == t.ids);

    auto empty = tokenize("");
    CHECK(empty.length() == 0);
    CHECK(empty.ids.size() == kMaxTokens);
    for (auto m : empty.mask) CHECK(m == 0);

    auto padded = tokenize("a red chair");
    CHECK(padded.ids.size() == kMaxTokens);
    CHECK(padded.mask[2] == 1);
    CHECK(padded.mask[3] == 0);
    for (auto id : padded.ids) CHECK(id < v.size());

    try {
      tokenize("a xylophone chair");
      FAIL("expected an out-of-vocabulary error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("xylophone") != std::string::npos);
    }
    std::string longer;
    for (int i = 0; i < 17; ++i) longer += "a ";
    CHECK_THROWS_AS(tokenize(longer), ConfigError);
  }

  TEST_CASE("vocabulary covers the grammar and round-trips through a file") {
    const auto& v = Vocabulary::builtin();
    CHECK(v.size() == synth::vocabulary_words().size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.word(i)) == i);
    auto path = std::filesystem::temp_directory_path() / "sketchdiff_test_vocab.txt";
    v.write(path);
    auto back = Vocabulary::read(path);
    REQUIRE(back.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.word(i) == v.word(i));
  }

  TEST_CASE("sinusoidal table") {
    auto pe = sinusoidal_table(4, 6);
    CHECK(pe[0] == 0.0);
    CHECK(pe[1] == 1.0);
    CHECK(pe[3 * 6 + 0] == doctest::Approx(std::sin(3.0)));
    CHECK(pe[3 * 6 + 3] == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 6))));
  }

  TEST_CASE("encoder output, padding invariance and position sensitivity") {
    Rng rng(1);
    TextEncoder enc(TextEncoderConfig{}, rng);
    const auto& v = Vocabulary::builtin();
    auto e = enc.encode(tokenize("a red chair", v, 3));
    CHECK(e.shape() == Shape{1, 128});
    for (double x : e.values()) CHECK(std::isfinite(x));
    CHECK(enc.encode(tokenize("a red chair", v, 16)).values() == e.values());
    CHECK(enc.encode(tokenize("a red chair", v, 9)).values() == e.values());

    auto ab = enc.encode(tokenize("red chair"));
    auto ba = enc.encode(tokenize("chair red"));
    double diff = 0.0;
    for (std::size_t i = 0; i < ab.size(); ++i) diff = std::max(diff, std::abs(ab[i] - ba[i]));
    CHECK(diff > 1e-6);

    auto batch = enc.encode_batch({tokenize("a red chair"), tokenize("a blue table with red legs", v, 7)});
    CHECK(batch.shape() == Shape{2, 128});
    for (std::size_t i = 0; i < 128; ++i) CHECK(batch[i] == doctest::Approx(e[i]).epsilon(1e-12));

    auto w = enc.attention_weights(tokenize("a red chair"));
    CHECK(w.shape() == Shape{4, 3, 3});
    for (std::size_t r = 0; r < 12; ++r) CHECK(w[3 * r] + w[3 * r + 1] + w[3 * r + 2] == doctest::Approx(1.0));
    CHECK(enc.encode(tokenize("")).shape() == Shape{1, 128});
  }

  TEST_CASE("gradient check through the text encoder") {
    auto r = sketchdiff::testing::gradcheck_text_encoder(6);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }
}
