#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "gradcheck_cases.hpp"
#include "sketchdiff/diffusion/checkpoint.hpp"
#include "sketchdiff/diffusion/staged.hpp"
#include "sketchdiff/error.hpp"

using namespace sketchdiff;
using namespace sketchdiff::diffusion;
using nn::Shape;
using nn::Tensor;
using sketchdiff::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// Bayes posterior of x_{t-1} on a grid: prior N(sqrt(ab_{t-1}) x0, 1 - ab_{t-1})
// times likelihood N(x_t; sqrt(a_t) x_{t-1}, b_t).
std::pair<double, double> grid_posterior(double x0, double xt, std::size_t t, const DiffusionSchedule& s) {
  const double pm = std::sqrt(s.alpha_bar[t - 1]) * x0, pv = 1.0 - s.alpha_bar[t - 1];
  const double a = s.alpha[t], b = s.beta[t];
  const double span = 12.0 * std::sqrt(pv);
  const int n = 200001;
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = pm - span + 2.0 * span * k / (n - 1);
    const double lw = -0.5 * (x - pm) * (x - pm) / pv - 0.5 * (xt - std::sqrt(a) * x) * (xt - std::sqrt(a) * x) / b;
    const double w = std::exp(lw);
    z += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.sketch_size = 32;
  m.steps = 8;
  m.beta_end = 0.2;
  m.hidden = 32;
  m.layers = 2;
  m.time_dim = 16;
  return m;
}

std::vector<synth::DatasetItem> tiny_items() {
  synth::DatasetRequest req;
  req.categories = {synth::Category::Chair, synth::Category::Table};
  req.count = 4;
  req.points = 96;
  req.sketch_size = 32;
  req.test_fraction = 0.0;
  return synth::generate_dataset(req);
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.steps = 4;
  t.batch_size = 2;
  t.points_per_shape = 32;
  t.seed = 3;
  return t;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sketchdiff_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("diffusion") {
  TEST_CASE("schedule values and identities") {
    auto s = make_schedule(200, 1e-4, 0.02);
    CHECK(s.alpha[1] == doctest::Approx(0.9999).epsilon(1e-15));
    CHECK(s.beta[200] == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.beta_tilde[1] == 0.0);
    double prod = 1.0;
    for (std::size_t t = 1; t <= 200; ++t) {
      prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * static_cast<double>(t - 1) / 199.0);
      CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
      CHECK(s.alpha_bar[t] == doctest::Approx(s.alpha_bar[t - 1] * s.alpha[t]).epsilon(1e-14));
      CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      CHECK((s.beta[t] > 0.0 && s.beta[t] < 1.0));
      if (t > 1) CHECK(s.beta[t] >= s.beta[t - 1]);
      CHECK((s.beta_tilde[t] >= 0.0 && s.beta_tilde[t] <= s.beta[t]));
      CHECK(s.sigma[t] * s.sigma[t] == doctest::Approx(s.beta_tilde[t]).epsilon(1e-12));
      const double bt = (1 - s.alpha_bar[t - 1]) / (1 - s.alpha_bar[t]) * s.beta[t];
      CHECK(s.beta_tilde[t] == doctest::Approx(bt).epsilon(1e-12));
    }
    // about 0.13 for this schedule, well above 0.02
    CHECK(s.alpha_bar[200] == doctest::Approx(prod).epsilon(1e-12));
    CHECK(s.alpha_bar[200] > 0.02);
    CHECK(make_schedule(1000, 1e-4, 0.02).alpha_bar[1000] < 1e-4);

    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.5, 0.2), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ConfigError);
  }

  TEST_CASE("forward_sample closed form") {
    auto s = make_schedule(10, 1e-4, 0.2);
    std::vector<double> x0{0.5, -1.0}, eps{0.3, 2.0}, zero{0.0, 0.0};
    auto a = forward_sample(x0, 4, zero, s);
    CHECK(a[1] == doctest::Approx(std::sqrt(s.alpha_bar[4]) * -1.0));
    auto b = forward_sample(zero, 4, eps, s);
    CHECK(b[0] == doctest::Approx(std::sqrt(1 - s.alpha_bar[4]) * 0.3));
    CHECK_THROWS_AS(forward_sample(x0, 11, eps, s), ConfigError);
  }

  TEST_CASE("forward marginals match the closed form") {
    for (std::size_t steps : {10u, 50u}) {
      auto s = make_schedule(steps, 1e-4, 0.2);
      Rng rng(steps);
      const double x0 = 0.8;
      const std::size_t n = 20000;
      double m1 = 0, m2 = 0, c1 = 0, c2 = 0;
      std::vector<double> e(1);
      for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> x{x0};
        for (std::size_t t = 1; t <= steps; ++t) {
          e[0] = rng.normal();
          x = forward_step(x, t, e, s);
        }
        m1 += x[0];
        m2 += x[0] * x[0];
        e[0] = rng.normal();
        const double y = forward_sample(std::vector<double>{x0}, steps, e, s)[0];
        c1 += y;
        c2 += y * y;
      }
      const double mean = m1 / n, var = m2 / n - mean * mean;
      const double cm = c1 / n, cv = c2 / n - cm * cm;
      CHECK(std::abs(mean - std::sqrt(s.alpha_bar[steps]) * x0) < 0.05);
      CHECK(std::abs(var - (1 - s.alpha_bar[steps])) < 0.05);
      CHECK(std::abs(cm - std::sqrt(s.alpha_bar[steps]) * x0) < 0.05);
      CHECK(std::abs(cv - (1 - s.alpha_bar[steps])) < 0.05);
    }
  }

  TEST_CASE("posterior parameters") {
    auto s = make_schedule(10, 1e-4, 0.2);
    std::vector<double> x0{0.7, -0.2}, xt{1.5, 0.4};
    auto p1 = posterior_params(x0, xt, 1, s);
    CHECK(p1.mean[0] == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(p1.mean[1] == doctest::Approx(-0.2).epsilon(1e-10));
    CHECK(p1.variance == 0.0);
    auto pz = posterior_params(std::vector<double>{0.0}, std::vector<double>{0.0}, 5, s);
    CHECK(pz.mean[0] == 0.0);

    // t = 2, product of two Gaussians in closed form
    {
      const double a2 = s.alpha[2], b2 = s.beta[2], ab1 = s.alpha_bar[1];
      const double prec = 1.0 / (1 - ab1) + a2 / b2;
      const double mean = (std::sqrt(ab1) * 0.7 / (1 - ab1) + std::sqrt(a2) * 1.5 / b2) / prec;
      auto p2 = posterior_params(x0, xt, 2, s);
      CHECK(std::abs(p2.mean[0] - mean) < 1e-6);
      CHECK(std::abs(p2.variance - 1.0 / prec) < 1e-6);
    }
    for (std::size_t t = 2; t <= 10; ++t) {
      auto p = posterior_params(std::vector<double>{0.7}, std::vector<double>{1.5}, t, s);
      auto [gm, gv] = grid_posterior(0.7, 1.5, t, s);
      CHECK(std::abs(p.mean[0] - gm) < 1e-3);
      CHECK(std::abs(p.variance - gv) < 1e-3);
    }
  }

  TEST_CASE("reverse_step") {
    auto s = make_schedule(10, 1e-4, 0.2);
    std::vector<double> x0{0.3, -0.6, 1.1}, eps{0.5, -1.2, 0.1}, z{0.0, 0.0, 0.0};
    auto x1 = forward_sample(x0, 1, eps, s);
    auto back = reverse_step(x1, eps, 1, s, z);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - x0[i]) < 1e-6);
    // at t = 1 the noise has no effect
    std::vector<double> big{5.0, 5.0, 5.0};
    CHECK(reverse_step(x1, eps, 1, s, big) == back);

    std::vector<double> x{1.0, -2.0, 0.5}, e{0.2, 0.3, -0.4};
    auto r = reverse_step(x, e, 6, s, z);
    std::vector<double> lx(3), le(3);
    for (int i = 0; i < 3; ++i) {
      lx[i] = -3.5 * x[i];
      le[i] = -3.5 * e[i];
    }
    auto lr = reverse_step(lx, le, 6, s, z);
    for (int i = 0; i < 3; ++i) CHECK(lr[i] == doctest::Approx(-3.5 * r[i]).epsilon(1e-13));
    const double expect = (x[0] - s.beta[6] / std::sqrt(1 - s.alpha_bar[6]) * e[0]) / std::sqrt(s.alpha[6]) + s.sigma[6] * 0.7;
    std::vector<double> zz{0.7, 0.0, 0.0};
    CHECK(reverse_step(x, e, 6, s, zz)[0] == doctest::Approx(expect).epsilon(1e-13));
  }

  TEST_CASE("noise net is per point and permutation equivariant") {
    Rng rng(1);
    NoiseNetConfig cfg;
    cfg.extra_dim = 3;
    cfg.hidden = 32;
    cfg.cond_dim = 16;
    cfg.time_dim = 8;
    NoiseNet net(cfg, rng);
    auto x = random_tensor({10, 3}, rng), g = random_tensor({10, 3}, rng), c = random_tensor({2, 16}, rng);
    auto y = net.predict(x, {3, 7}, c, &g);
    CHECK(y.shape() == Shape{10, 3});
    // permute within each shape
    std::vector<std::size_t> perm{4, 2, 0, 1, 3, 9, 5, 8, 7, 6};
    std::vector<double> px, pg;
    for (auto i : perm)
      for (int k = 0; k < 3; ++k) {
        px.push_back(x[i * 3 + k]);
        pg.push_back(g[i * 3 + k]);
      }
    auto pgt = Tensor::from({10, 3}, pg);
    auto py = net.predict(Tensor::from({10, 3}, px), {3, 7}, c, &pgt);
    for (std::size_t r = 0; r < 10; ++r)
      for (int k = 0; k < 3; ++k) CHECK(py[r * 3 + k] == doctest::Approx(y[perm[r] * 3 + k]).epsilon(1e-13));
    CHECK_THROWS_AS(net.predict(x, {3, 7}, c), ContractError);
    CHECK_THROWS_AS(net.predict(x, {3, 7}, random_tensor({2, 5}, rng), &g), ConfigError);
  }

  TEST_CASE("fourier features layout") {
    auto x = Tensor::from({1, 2}, {0.25, -0.5});
    auto f = fourier_features(x, 2);
    REQUIRE(f.shape() == Shape{1, 10});
    CHECK(f[0] == 0.25);
    CHECK(f[2] == doctest::Approx(std::sin(M_PI * 0.25)));
    CHECK(f[5] == doctest::Approx(std::cos(M_PI * -0.5)));
    CHECK(f[7] == doctest::Approx(std::sin(2 * M_PI * -0.5)));
    CHECK(f[8] == doctest::Approx(std::cos(2 * M_PI * 0.25)));
  }

  TEST_CASE("time embedding") {
    auto e = time_embedding({0, 5}, 8);
    CHECK(e.shape() == Shape{2, 8});
    for (double v : e.values()) CHECK(std::isfinite(v));
    bool differs = false;
    for (std::size_t k = 0; k < 8; ++k) differs = differs || e[k] != e[8 + k];
    CHECK(differs);
  }

  TEST_CASE("denoise loss with oracle and zero predictors") {
    auto s = make_schedule(50, 1e-4, 0.05);
    Rng rng(2);
    auto x0 = random_tensor({2500, 4}, rng);
    NoisePredictor oracle = [&](const Tensor& xt, const std::vector<std::size_t>& t) {
      std::vector<double> e(xt.size());
      for (std::size_t i = 0; i < e.size(); ++i) {
        const double ab = s.alpha_bar[t[0]];
        e[i] = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
      }
      return Tensor::from(xt.shape(), e);
    };
    Rng r1(3);
    CHECK(denoise_loss(oracle, x0, 1, s, r1).item() < 1e-20);
    NoisePredictor zero = [](const Tensor& xt, const std::vector<std::size_t>&) { return Tensor::zeros(xt.shape()); };
    Rng r2(4);
    CHECK(std::abs(denoise_loss(zero, x0, 1, s, r2).item() - 1.0) < 0.05);

    // joint permutation of (x_t, eps) rows leaves the loss unchanged
    Rng r3(5);
    NoiseNetConfig cfg;
    cfg.hidden = 16;
    cfg.cond_dim = 4;
    cfg.time_dim = 8;
    NoiseNet net(cfg, r3);
    auto x = random_tensor({12, 3}, r3);
    auto cond = random_tensor({1, 4}, r3);
    auto batch = noise_batch(x, 1, s, r3);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    r3.shuffle(perm);
    std::vector<double> pxt, pe;
    for (auto i : perm)
      for (int k = 0; k < 3; ++k) {
        pxt.push_back(batch.xt[i * 3 + k]);
        pe.push_back(batch.eps[i * 3 + k]);
      }
    const double l1 = nn::mse(batch.eps, net.predict(batch.xt, batch.t, cond)).item();
    const double l2 = nn::mse(Tensor::from({12, 3}, pe), net.predict(Tensor::from({12, 3}, pxt), batch.t, cond)).item();
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-13));
    for (auto t : batch.t) CHECK((t >= 1 && t <= 50));
  }

  TEST_CASE("gradient of the squared prediction norm") {
    Rng rng(6);
    NoiseNetConfig cfg;
    cfg.hidden = 24;
    cfg.cond_dim = 8;
    cfg.time_dim = 8;
    NoiseNet net(cfg, rng);
    auto x = random_tensor({8, 3}, rng), c = random_tensor({2, 8}, rng);
    nn::TensorList params;
    net.collect("net", params);
    auto r = sketchdiff::testing::gradcheck(
        [&] {
          auto y = net.predict(x, {2, 9}, c);
          return nn::sum_all(nn::mul(y, y));
        },
        sketchdiff::testing::trainable_only(params), 8);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }

  TEST_CASE("gradient check through the denoising loss") {
    auto r = sketchdiff::testing::gradcheck_denoise_loss(8);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }

  TEST_CASE("config key-value round trips") {
    ModelConfig m = tiny_model();
    m.appearance_condition = AppearanceCondition::Text;
    auto m2 = ModelConfig::from_kv(m.to_kv());
    CHECK(m2.to_kv() == m.to_kv());
    TrainConfig t = tiny_train();
    t.color_mode = ColorMode::Canonical;
    t.lr = 3.25e-4;
    auto t2 = TrainConfig::from_kv(t.to_kv());
    CHECK(t2.to_kv() == t.to_kv());
    CHECK(t2.lr == t.lr);
    CHECK(parse_color_mode("mixed") == ColorMode::Mixed);
    CHECK_THROWS_AS(parse_color_mode("sepia"), ConfigError);
    CHECK_THROWS_AS(parse_stage("both"), ConfigError);
    t.lr = 0.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }

  TEST_CASE("staged training is deterministic and freezes geometry") {
    const auto items = tiny_items();
    GeometryModel g1(tiny_model(), 5), g2(tiny_model(), 5);
    CHECK(g1.hash() == g2.hash());
    auto r1 = train_geometry(g1, items, tiny_train());
    auto r2 = train_geometry(g2, items, tiny_train());
    CHECK(r1.loss_history.size() == 4);
    CHECK(r1.loss_history == r2.loss_history);
    CHECK(g1.hash() == g2.hash());
    for (double l : r1.loss_history) CHECK(std::isfinite(l));

    const auto before = g1.hash();
    auto fusion_cfg = tiny_model();
    AppearanceModel app(fusion_cfg, 6);
    std::size_t logged = 0;
    auto ra = train_appearance(app, g1, items, tiny_train(), [&](std::size_t, double, double) { ++logged; });
    CHECK(logged == 4);
    CHECK(g1.hash() == before);
    CHECK(ra.loss_history.size() == 4);

    auto text_cfg = tiny_model();
    text_cfg.appearance_condition = AppearanceCondition::Text;
    AppearanceModel app_t(text_cfg, 6);
    train_appearance(app_t, g1, items, tiny_train());
    CHECK(g1.hash() == before);

    // disjoint parameter names across the stages
    std::set<std::string> names;
    for (const auto& t : g1.tensors()) names.insert(t.name);
    for (const auto& t : app.tensors()) CHECK(names.count(t.name) == 0);
  }

  TEST_CASE("generation, re-editing and color sampling") {
    const auto items = tiny_items();
    GeometryModel geo(tiny_model(), 7);
    auto mc = tiny_model();
    mc.appearance_condition = AppearanceCondition::Text;
    AppearanceModel app(mc, 8);
    GenerateOptions opt;
    opt.points = 40;
    opt.seed = 11;
    std::size_t seen = 0;
    opt.geometry_observer = [&](std::size_t, const std::vector<double>& x) {
      ++seen;
      CHECK(x.size() == 120);
      for (double v : x) CHECK(std::isfinite(v));
    };
    const std::string red = "a red chair with red back and red legs";
    auto shape_only = generate(geo, nullptr, items[0].sketch, std::nullopt, opt);
    CHECK(seen == 8);
    CHECK(shape_only.g.size() == 40);
    CHECK(shape_only.a.empty());
    auto colored = generate(geo, &app, items[0].sketch, red, opt);
    CHECK(colored.a.size() == 40);
    for (const auto& c : colored.a)
      for (double v : c) CHECK((v >= 0.0 && v <= 1.0));
    auto again = generate(geo, &app, items[0].sketch, red, opt);
    CHECK(again.g == colored.g);
    CHECK(again.a == colored.a);

    const auto geo_hash = geo.hash(), app_hash = app.hash();
    auto ed = re_edit(colored, items[0].sketch, "a blue chair with blue back and blue legs", 3, geo, app);
    CHECK(ed.g == colored.g);
    auto ed2 = re_edit(colored, items[0].sketch, "a blue chair with blue back and blue legs", 3, geo, app);
    CHECK(ed2.a == ed.a);
    CHECK(ed.a != re_edit(colored, items[0].sketch, red, 3, geo, app).a);
    CHECK(geo.hash() == geo_hash);
    CHECK(app.hash() == app_hash);

    // color sampling commutes with point permutations
    std::vector<synth::Vec3> g0(items[1].cloud.g.begin(), items[1].cloud.g.begin() + 30);
    auto cols = sample_colors_from_text(app, g0, red, 4);
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(9);
    rng.shuffle(perm);
    std::vector<synth::Vec3> pg0;
    for (auto i : perm) pg0.push_back(g0[i]);
    auto pcols = sample_colors_from_text(app, pg0, red, 4);
    for (std::size_t k = 0; k < 30; ++k) CHECK(pcols[k] == cols[perm[k]]);

    AppearanceModel fusion_app(tiny_model(), 8);
    CHECK_THROWS_AS(sample_colors_from_text(fusion_app, g0, red, 4), ContractError);
  }

  TEST_CASE("a zero noise predictor makes generation a known Gaussian chain") {
    ModelConfig m = tiny_model();
    m.steps = 50;
    m.beta_end = 0.05;
    GeometryModel geo(m, 12);
    const std::string last = "geometry.net.layer" + std::to_string(m.layers);
    const std::string last_cond = "geometry.net.cond" + std::to_string(m.layers);
    for (auto& p : geo.tensors()) {
      if (p.name.rfind(last, 0) == 0 || p.name.rfind(last_cond, 0) == 0)
        for (auto& v : p.tensor.data()) v = 0.0;
    }
    // x_{t-1} = x_t / sqrt(alpha_t) + sigma_t z, starting from N(0, 1)
    double var = 1.0;
    for (std::size_t t = m.steps; t >= 1; --t) {
      const double beta = m.beta_start + (m.beta_end - m.beta_start) * double(t - 1) / double(m.steps - 1);
      double ab = 1.0, ab_prev = 1.0;
      for (std::size_t u = 1; u <= t; ++u) {
        const double bu = m.beta_start + (m.beta_end - m.beta_start) * double(u - 1) / double(m.steps - 1);
        ab *= 1.0 - bu;
        if (u < t) ab_prev = ab;
      }
      var /= 1.0 - beta;
      if (t > 1) var += (1.0 - ab_prev) / (1.0 - ab) * beta;
    }
    synth::SketchImage sketch(32, 32);
    GenerateOptions opt;
    opt.points = 4000;
    opt.seed = 2;
    auto cloud = generate(geo, nullptr, sketch, std::nullopt, opt);
    for (int k = 0; k < 3; ++k) {
      double m1 = 0, m2 = 0;
      for (const auto& p : cloud.g) {
        m1 += p[k];
        m2 += p[k] * p[k];
      }
      m1 /= 4000;
      const double sd = std::sqrt(m2 / 4000 - m1 * m1);
      CHECK(std::abs(m1) < 5.0 * std::sqrt(var / 4000));
      CHECK(sd == doctest::Approx(std::sqrt(var)).epsilon(0.05));
    }
  }

  TEST_CASE("checkpoints round-trip and reject bad files") {
    auto dir = scratch("ckpt");
    const auto items = tiny_items();
    GeometryModel geo(tiny_model(), 13);
    auto r = train_geometry(geo, items, tiny_train());
    save_geometry(dir / "g.ckpt", geo, tiny_train(), r.loss_history);
    auto back = load_geometry(dir / "g.ckpt");
    CHECK(back.hash() == geo.hash());
    CHECK(back.config.to_kv() == geo.config.to_kv());
    auto ck = read_checkpoint(dir / "g.ckpt");
    CHECK(ck.loss_history == r.loss_history);
    CHECK(ck.stage == Stage::Geometry);
    CHECK(ck.config().at("train.seed") == "3");

    AppearanceModel app(tiny_model(), 14);
    app.geometry_hash = geo.hash();
    save_appearance(dir / "a.ckpt", app, tiny_train(), {});
    auto app_back = load_appearance(dir / "a.ckpt");
    CHECK(app_back.hash() == app.hash());
    CHECK(app_back.geometry_hash == geo.hash());

    CHECK_THROWS_AS(load_geometry(dir / "a.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_appearance(dir / "g.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_geometry(dir / "missing.ckpt"), CheckpointError);

    std::ifstream in(dir / "g.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto write = [&](const std::string& name, const std::string& content) {
      std::ofstream out(dir / name, std::ios::binary);
      out << content;
    };
    write("trunc.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_geometry(dir / "trunc.ckpt"), CheckpointError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    write("magic.ckpt", bad_magic);
    CHECK_THROWS_AS(read_checkpoint(dir / "magic.ckpt"), CheckpointError);
    auto bad_version = bytes;
    bad_version[8] = static_cast<char>(kCheckpointVersion + 1);
    write("version.ckpt", bad_version);
    try {
      read_checkpoint(dir / "version.ckpt");
      FAIL("expected a version error");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
}
