#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sketchdiff/nn/attention.hpp"
#include "sketchdiff/nn/module.hpp"
#include "support.hpp"

using namespace sketchdiff;
using namespace sketchdiff::nn;
using sketchdiff::testing::gradcheck;
using sketchdiff::testing::leaves;
using sketchdiff::testing::random_tensor;

namespace {

// sum(out * w) for a fixed random w, so every output entry carries a distinct weight
Tensor probe_loss(const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w = random_tensor(out.shape(), rng);
  return sum_all(mul(out, w));
}

void check_op(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
              double tol = 1e-6) {
  for (auto& t : inputs) t.set_requires_grad(true);
  auto r = gradcheck([&] { return probe_loss(op(inputs)); }, leaves(inputs), 24);
  INFO(r.worst);
  CHECK(r.max_rel < tol);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("broadcast add and mul match elementwise loops") {
    Rng rng(1);
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 1}, rng);
    auto s = add(a, b), p = mul(a, b);
    CHECK(s.shape() == Shape{2, 3, 4});
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 4; ++k) {
          const std::size_t idx = (i * 3 + j) * 4 + k;
          CHECK(s[idx] == doctest::Approx(a[idx] + b[j]).epsilon(1e-15));
          CHECK(p[idx] == doctest::Approx(a[idx] * b[j]).epsilon(1e-15));
        }
    CHECK_THROWS(add(random_tensor({2, 3}, rng), random_tensor({4}, rng)));
  }

  TEST_CASE("elementwise gradients") {
    Rng rng(2);
    check_op([](auto& in) { return add(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
    check_op([](auto& in) { return sub(in[0], in[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({3, 1}, rng)});
    check_op([](auto& in) { return mul(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng)});
    check_op([](auto& in) { return scale(in[0], -2.5); }, {random_tensor({5}, rng)});
    check_op([](auto& in) { return silu(in[0]); }, {random_tensor({20}, rng, 2.0)});
    check_op([](auto& in) { return sigmoid(in[0]); }, {random_tensor({20}, rng, 2.0)});
    // relu away from the kink
    std::vector<double> v(20);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1.0 : -1.0) * (0.1 + rng.uniform());
    check_op([](auto& in) { return relu(in[0]); }, {Tensor::from({20}, v)});
  }

  TEST_CASE("reductions and shape ops") {
    Rng rng(3);
    auto x = random_tensor({2, 3, 4}, rng);
    auto s1 = sum(x, 1, false);
    CHECK(s1.shape() == Shape{2, 4});
    CHECK(s1[0] == doctest::Approx(x[0] + x[4] + x[8]));
    CHECK(mean(x, 2)[0] == doctest::Approx((x[0] + x[1] + x[2] + x[3]) / 4));
    double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    CHECK(sum_all(x).item() == doctest::Approx(total));
    CHECK(mean_all(x).item() == doctest::Approx(total / 24));
    auto p = permute(x, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    CHECK(p[(3 * 2 + 1) * 3 + 2] == x[(1 * 3 + 2) * 4 + 3]);
    auto sl = slice(x, 2, 1, 2);
    CHECK(sl[0] == x[1]);
    CHECK(sl[1] == x[2]);
    auto c = concat({x, sl}, 2);
    CHECK(c.shape() == Shape{2, 3, 6});
    CHECK(c[5] == x[2]);

    check_op([](auto& in) { return sum(in[0], 1); }, {random_tensor({2, 3, 4}, rng)});
    check_op([](auto& in) { return mean(in[0], 0, false); }, {random_tensor({2, 3, 4}, rng)});
    check_op([](auto& in) { return reshape(in[0], {6, 4}); }, {random_tensor({2, 3, 4}, rng)});
    check_op([](auto& in) { return permute(in[0], {1, 2, 0}); }, {random_tensor({2, 3, 4}, rng)});
    check_op([](auto& in) { return concat({in[0], in[1]}, 1); }, {random_tensor({2, 3}, rng), random_tensor({2, 5}, rng)});
    check_op([](auto& in) { return slice(in[0], 1, 1, 2); }, {random_tensor({2, 4, 3}, rng)});
    check_op([](auto& in) { return mse(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  }

  TEST_CASE("softmax and squash") {
    Rng rng(4);
    auto x = random_tensor({3, 5}, rng, 3.0);
    auto y = softmax(x, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < 5; ++c) z += std::exp(x[r * 5 + c]);
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(y[r * 5 + c] == doctest::Approx(std::exp(x[r * 5 + c]) / z).epsilon(1e-12));
        total += y[r * 5 + c];
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    // large logits stay finite
    auto big = softmax(Tensor::from({2}, {1000.0, 0.0}), 0);
    CHECK(big[0] == doctest::Approx(1.0));

    auto zero = squash(Tensor::zeros({1, 3}), 1);
    for (double v : zero.values()) CHECK(v == 0.0);
    auto unit = squash(Tensor::from({1, 2}, {0.6, 0.8}), 1);
    CHECK(std::hypot(unit[0], unit[1]) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(unit[0] / unit[1] == doctest::Approx(0.75));
    auto large = squash(Tensor::from({1, 2}, {60.0, 80.0}), 1);
    const double n = std::hypot(large[0], large[1]);
    CHECK(n > 0.9999);
    CHECK(n < 1.0);
    CHECK(n == doctest::Approx(10000.0 / 10001.0).epsilon(1e-12));

    check_op([](auto& in) { return softmax(in[0], 1); }, {random_tensor({3, 5}, rng)});
    check_op([](auto& in) { return softmax(in[0], 0); }, {random_tensor({4, 2}, rng)});
    check_op([](auto& in) { return squash(in[0], 1); }, {random_tensor({2, 4, 3}, rng)});
  }

  TEST_CASE("squash norm is monotone in the input norm") {
    double prev = -1.0;
    for (double r = 0.0; r < 50.0; r += 0.37) {
      auto y = squash(Tensor::from({3}, {r, 0.0, 0.0}), 0);
      const double n = std::abs(y[0]);
      CHECK(n > prev - 1e-15);
      CHECK(n < 1.0);
      prev = n;
    }
  }

  TEST_CASE("matmul, linear and bmm against loops") {
    Rng rng(5);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 2 + j];
        CHECK(c[i * 2 + j] == doctest::Approx(s).epsilon(1e-13));
      }
    auto bias = random_tensor({2}, rng);
    auto l = linear(reshape(a, {1, 3, 4}), b, bias);
    CHECK(l.shape() == Shape{1, 3, 2});
    CHECK(l[3] == doctest::Approx(c[3] + bias[1]));

    auto x = random_tensor({2, 3, 4}, rng), y = random_tensor({2, 5, 4}, rng);
    auto z = bmm(x, y, true);
    CHECK(z.shape() == Shape{2, 3, 5});
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += x[(1 * 3 + 2) * 4 + k] * y[(1 * 5 + 4) * 4 + k];
    CHECK(z[(1 * 3 + 2) * 5 + 4] == doctest::Approx(s).epsilon(1e-13));

    check_op([](auto& in) { return matmul(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    check_op([](auto& in) { return linear(in[0], in[1], in[2]); },
             {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)});
    check_op([](auto& in) { return bmm(in[0], in[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)});
    check_op([](auto& in) { return bmm(in[0], in[1], true); },
             {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)});
    check_op([](auto& in) { return add_grouped(in[0], in[1]); }, {random_tensor({6, 3}, rng), random_tensor({2, 3}, rng)});
  }

  TEST_CASE("conv2d matches a direct replicate-padded loop") {
    Rng rng(6);
    auto x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    auto y = conv2d(x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape{2, 3, 3, 3});
    auto clampi = [](long v) { return static_cast<std::size_t>(std::clamp(v, 0L, 4L)); };
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) {
            double s = b[o];
            for (std::size_t c = 0; c < 2; ++c)
              for (std::size_t ki = 0; ki < 3; ++ki)
                for (std::size_t kj = 0; kj < 3; ++kj) {
                  const auto r = clampi(static_cast<long>(i * 2 + ki) - 1);
                  const auto q = clampi(static_cast<long>(j * 2 + kj) - 1);
                  s += w[((o * 2 + c) * 3 + ki) * 3 + kj] * x[((n * 2 + c) * 5 + r) * 5 + q];
                }
            CHECK(y[((n * 3 + o) * 3 + i) * 3 + j] == doctest::Approx(s).epsilon(1e-13));
          }
    // constant input gives a spatially constant response
    auto flat = conv2d(Tensor::full({1, 2, 6, 6}, 0.7), w, b, 2, 1);
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t k = 1; k < 9; ++k) CHECK(flat[o * 9 + k] == doctest::Approx(flat[o * 9]).epsilon(1e-14));

    check_op([](auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
             {random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
    check_op([](auto& in) { return conv2d(in[0], in[1], in[2], 1, 0); },
             {random_tensor({1, 4, 3, 3}, rng), random_tensor({2, 4, 1, 1}, rng), random_tensor({2}, rng)});
  }

  TEST_CASE("maxpool2d") {
    auto x = Tensor::from({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 7, 6});
    auto y = maxpool2d(x, 2);
    REQUIRE(y.shape() == Shape{1, 1, 1, 2});
    CHECK(y[0] == 5);
    CHECK(y[1] == 7);
    Rng rng(7);
    check_op([](auto& in) { return maxpool2d(in[0], 2); }, {random_tensor({2, 3, 4, 4}, rng)});
  }

  TEST_CASE("batchnorm2d training statistics and running update") {
    Rng rng(8);
    auto x = random_tensor({3, 2, 2, 2}, rng, 2.0);
    BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
    auto y = batchnorm2d(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), st, true);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t k = 0; k < 4; ++k) m += x[(n * 2 + c) * 4 + k];
      m /= 12;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t k = 0; k < 4; ++k) v += std::pow(x[(n * 2 + c) * 4 + k] - m, 2);
      v /= 12;
      CHECK(y[c * 4] == doctest::Approx((x[c * 4] - m) / std::sqrt(v + 1e-5)).epsilon(1e-12));
      CHECK(st.running_mean[c] == doctest::Approx(0.1 * m).epsilon(1e-12));
    }
    // inference uses the running buffers
    BatchNormState unit{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
    auto z = batchnorm2d(x, Tensor::full({2}, 2.0), Tensor::full({2}, 0.5), unit, false);
    CHECK(z[0] == doctest::Approx(2.0 * x[0] / std::sqrt(1.0 + 1e-5) + 0.5));
    CHECK(unit.running_mean[0] == 0.0);

    BatchNormState g{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
    check_op([&](auto& in) { return batchnorm2d(in[0], in[1], in[2], g, true); },
             {random_tensor({3, 2, 2, 2}, rng), random_tensor({2}, rng), random_tensor({2}, rng)});
  }

  TEST_CASE("layernorm and embedding") {
    Rng rng(9);
    auto x = random_tensor({2, 6}, rng, 3.0);
    auto y = layernorm(x, Tensor::full({6}, 1.0), Tensor::zeros({6}));
    for (std::size_t r = 0; r < 2; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < 6; ++c) m += y[r * 6 + c];
      for (std::size_t c = 0; c < 6; ++c) v += y[r * 6 + c] * y[r * 6 + c];
      CHECK(std::abs(m / 6) < 1e-12);
      CHECK(v / 6 == doctest::Approx(1.0).epsilon(1e-4));
    }
    auto table = random_tensor({5, 3}, rng);
    auto e = embedding(table, {4, 0, 4});
    CHECK(e.shape() == Shape{3, 3});
    CHECK(e[0] == table[12]);
    CHECK(e[4] == table[1]);
    check_op([](auto& in) { return layernorm(in[0], in[1], in[2]); },
             {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)});
    check_op([](auto& in) { return embedding(in[0], {2, 1, 2, 3}); }, {random_tensor({4, 3}, rng)});
  }

  TEST_CASE("autograd bookkeeping") {
    Rng rng(10);
    auto a = random_tensor({3}, rng, 1.0, true);
    // a used twice accumulates both paths
    auto y = sum_all(add(mul(a, a), a));
    y.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.grad()[i] == doctest::Approx(2 * a[i] + 1));
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      auto z = mul(a, a);
      CHECK_FALSE(z.requires_grad());
    }
    CHECK(grad_enabled());
    auto d = a.detach();
    CHECK_FALSE(d.requires_grad());
    auto c = a.clone();
    c.data()[0] += 1.0;
    CHECK(c[0] != a[0]);
  }

  TEST_CASE("adam reduces a quadratic and hashes track values") {
    Rng rng(11);
    Linear lin(3, 1, rng);
    TensorList params;
    lin.collect("lin", params);
    const auto h0 = hash_tensors(params);
    CHECK(hash_tensors(params) == h0);
    Adam opt(params, {.lr = 0.05});
    auto x = random_tensor({16, 3}, rng);
    auto target = random_tensor({16, 1}, rng);
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 200; ++s) {
      auto loss = mse(lin(x), target);
      if (s == 0) first = loss.item();
      last = loss.item();
      loss.backward();
      opt.step();
    }
    CHECK(last < first);
    CHECK(hash_tensors(params) != h0);

    Linear other(3, 1, rng);
    TensorList dst;
    other.collect("lin", dst);
    copy_values(params, dst);
    CHECK(hash_tensors(dst) == hash_tensors(params));
  }

  TEST_CASE("multi-head attention weights are softmax rows") {
    Rng rng(12);
    MultiHeadAttention att(8, 6, 2, 4, 8, rng);
    auto q = random_tensor({3, 4, 8}, rng), kv = random_tensor({3, 5, 6}, rng);
    auto out = att(q, kv, kv);
    CHECK(out.out.shape() == Shape{3, 4, 8});
    CHECK(out.weights.shape() == Shape{6, 4, 5});
    for (std::size_t r = 0; r < 24; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += out.weights[r * 5 + k];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    TensorList params;
    att.collect("att", params);
    auto qv = q, kk = kv;
    qv.set_requires_grad(true);
    kk.set_requires_grad(true);
    auto all = sketchdiff::testing::trainable_only(params);
    all.push_back({"q", qv, true});
    all.push_back({"kv", kk, true});
    auto r = gradcheck([&] { return probe_loss(att(qv, kk, kk).out); }, all, 10);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-6);
  }
}
