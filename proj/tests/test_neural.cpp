#include <cmath>
#include <random>
#include <sstream>

#include "concordia/neural.hpp"
#include "doctest.h"

using namespace concordia::neural;

TEST_CASE("zero network is uniform") {
  Mlp net = Mlp::zeros({4, 5, 3}, Task::classification);
  std::vector<double> x = {0.3, -1.0, 2.0, 0.0};
  auto p = predict(net, x);
  REQUIRE(p.size() == 3);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("outputs are distributions") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  Mlp net({3, 6, 6, 4}, Task::classification, 5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x = {n(rng), n(rng), n(rng)};
    auto p = predict(net, x);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
    CHECK(predict(net, x) == p);
  }
}

TEST_CASE("seeded 2-4-2 network matches a straight-line forward pass") {
  Mlp net({2, 4, 2}, Task::classification, 42);
  const auto& l0 = net.layers()[0];
  const auto& l1 = net.layers()[1];
  const double x0 = 1.0, x1 = 0.0;
  double h[4];
  for (int j = 0; j < 4; ++j) h[j] = std::tanh(l0.weights[j * 2 + 0] * x0 + l0.weights[j * 2 + 1] * x1 + l0.bias[j]);
  double z[2];
  for (int k = 0; k < 2; ++k) {
    z[k] = l1.bias[k];
    for (int j = 0; j < 4; ++j) z[k] += l1.weights[k * 4 + j] * h[j];
  }
  const double e0 = std::exp(z[0]), e1 = std::exp(z[1]);
  auto p = predict(net, std::vector<double>{x0, x1});
  CHECK(p[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-14));
  // Xavier bound for the first layer.
  for (double w : l0.weights) CHECK(std::abs(w) <= std::sqrt(6.0 / 6.0));
  // Same seed, same network.
  CHECK(Mlp({2, 4, 2}, Task::classification, 42) == net);
  CHECK_FALSE(Mlp({2, 4, 2}, Task::classification, 43) == net);
}

TEST_CASE("width mismatch") {
  Mlp net({3, 2}, Task::classification, 1);
  CHECK_THROWS_AS(predict(net, std::vector<double>{1.0, 2.0}), WidthError);
  std::vector<double> x = {1.0, 2.0};
  std::vector<double> y = {1.0, 0.0};
  CHECK_THROWS_AS(grad_check(net, x, y, y), WidthError);
  CHECK_THROWS_AS(Mlp({3, 2}, Task::regression, 1), WidthError);
  CHECK_THROWS_AS(Mlp({3, 4}, Task::classification, 1, {2, 1}), WidthError);
}

TEST_CASE("softmax shift invariance") {
  std::vector<double> z = {0.3, -2.0, 5.0, 1.0};
  auto a = softmax(z);
  for (double& v : z) v += 123.456;
  auto b = softmax(z);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("KL divergence") {
  std::vector<double> p = {0.8, 0.2};
  std::vector<double> q = {0.5, 0.5};
  const double hand = 0.8 * std::log(0.8 / 0.5) + 0.2 * std::log(0.2 / 0.5);
  CHECK(kl_divergence(p, q) == doctest::Approx(hand).epsilon(1e-5));
  CHECK(kl_divergence(p, q) == doctest::Approx(0.1927).epsilon(1e-3));
  CHECK(kl_divergence(p, p) == 0.0);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a = {u(rng), u(rng), u(rng)};
    std::vector<double> b = {u(rng), u(rng), 0.0};
    double sa = a[0] + a[1] + a[2], sb = b[0] + b[1];
    for (double& v : a) v /= sa;
    for (double& v : b) v /= sb;
    CHECK(kl_divergence(a, b) >= 0.0);
    CHECK(std::isfinite(kl_divergence(a, b)));
  }
}

TEST_CASE("loss") {
  Mlp net = Mlp::zeros({1, 2}, Task::classification);
  std::vector<double> peaked = {1.0, 0.0};
  CHECK(loss(net, peaked, peaked, peaked, LossMode::supervised) == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<double> pred = {0.8, 0.2};
  std::vector<double> teacher = {0.5, 0.5};
  std::vector<double> label = {1.0, 0.0};
  CHECK(loss(net, pred, label, teacher, LossMode::unsupervised) == doctest::Approx(kl_divergence(pred, teacher)));
  CHECK(loss(net, pred, label, teacher, LossMode::supervised) ==
        doctest::Approx(-std::log(0.8) + kl_divergence(pred, teacher)));
  CHECK(loss(net, pred, label, {}, LossMode::supervised) == doctest::Approx(-std::log(0.8)));

  Mlp reg = Mlp::zeros({1, 1}, Task::regression);
  std::vector<double> yhat = {0.7};
  std::vector<double> y = {0.5};
  std::vector<double> t = {0.7};
  CHECK(loss(reg, yhat, y, t, LossMode::supervised) == doctest::Approx(0.04).epsilon(1e-9));
}

TEST_CASE("update_neural") {
  Mlp net({3, 5, 2}, Task::classification, 11);
  std::vector<double> x = {0.5, -0.2, 1.0};
  std::vector<double> y = {0.0, 1.0};
  std::vector<double> t = {0.3, 0.7};
  CHECK(update_neural(net, x, y, t, 0.0) == net);
  const double before = loss(net, predict(net, x), y, t, LossMode::supervised);
  Mlp next = update_neural(net, x, y, t, 1e-3);
  CHECK(loss(next, predict(next, x), y, t, LossMode::supervised) < before);
}

TEST_CASE("gradients match finite differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int fixture = 0; fixture < 20; ++fixture) {
    const bool regression = fixture % 4 == 3;
    std::vector<std::size_t> widths = {3, 5, regression ? std::size_t{1} : std::size_t{3}};
    if (fixture % 5 == 1) widths.insert(widths.begin() + 1, 4);
    Mlp net(widths, regression ? Task::regression : Task::classification, static_cast<std::uint64_t>(fixture));
    std::vector<double> x(3);
    for (double& v : x) v = n(rng);
    std::vector<double> label(net.output_width(), 0.0);
    std::vector<double> teacher(net.output_width());
    if (regression) {
      label[0] = u(rng);
      teacher[0] = u(rng);
    } else {
      label[static_cast<std::size_t>(fixture) % label.size()] = 1.0;
      double s = 0.0;
      for (double& v : teacher) s += (v = u(rng));
      for (double& v : teacher) v /= s;
    }
    for (auto mode : {LossMode::supervised, LossMode::unsupervised}) {
      CAPTURE(fixture);
      CHECK(grad_check(net, x, label, teacher, mode) < 1e-4);
    }
  }
}

TEST_CASE("bias-only network") {
  Mlp net = Mlp::zeros({0, 3}, Task::classification);
  net.layers()[0].bias = {0.2, -0.4, 1.0};
  std::vector<double> x;
  std::vector<double> y = {0.0, 0.0, 1.0};
  std::vector<double> t = {0.2, 0.5, 0.3};
  CHECK(grad_check(net, x, y, t) < 1e-6);
}

TEST_CASE("multi-head outputs") {
  Mlp net({2, 4, 5}, Task::classification, 9, {3, 2});
  std::vector<double> x = {0.1, 0.9};
  auto p = predict(net, x);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(p[3] + p[4] == doctest::Approx(1.0));
  std::vector<double> y = {0, 1, 0, 1, 0};
  std::vector<double> t = {0.2, 0.5, 0.3, 0.6, 0.4};
  CHECK(grad_check(net, x, y, t) < 1e-4);
}

TEST_CASE("backprop_output agrees with finite differences of a linear functional") {
  Mlp net({3, 4, 3}, Task::classification, 2);
  std::vector<double> x = {0.2, -0.7, 1.3};
  std::vector<double> c = {0.5, -1.0, 2.0};
  auto fw = forward(net, x);
  auto g = backprop_output(net, fw, c);
  auto params = net.parameters();
  Mlp probe = net;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto f = [&](double delta) {
      auto q = params;
      q[i] += delta;
      probe.set_parameters(q);
      auto p = predict(probe, x);
      return c[0] * p[0] + c[1] * p[1] + c[2] * p[2];
    };
    const double numeric = (f(1e-6) - f(-1e-6)) / 2e-6;
    CHECK(g[i] == doctest::Approx(numeric).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("linearly separable toy set") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x = {n(rng), n(rng)};
    const std::size_t y = x[0] + 0.5 * x[1] > 0.0 ? 1 : 0;
    x[0] += y ? 0.3 : -0.3;
    xs.push_back(x);
    ys.push_back(y);
  }
  Mlp net({2, 8, 2}, Task::classification, 13);
  double acc = 0.0;
  for (int epoch = 0; epoch < 500 && acc < 0.95; ++epoch) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::vector<double> label = {ys[i] == 0 ? 1.0 : 0.0, ys[i] == 1 ? 1.0 : 0.0};
      net = update_neural(net, xs[i], label, {}, 0.05);
    }
    int correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) correct += argmax(predict(net, xs[i])) == ys[i];
    acc = correct / 100.0;
  }
  CHECK(acc >= 0.95);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  for (auto task : {Task::classification, Task::regression}) {
    Mlp net({3, 7, 4, task == Task::regression ? std::size_t{1} : std::size_t{4}}, task, 77,
            task == Task::regression ? std::vector<std::size_t>{} : std::vector<std::size_t>{2, 2});
    std::stringstream ss;
    save_checkpoint(ss, net);
    Mlp back = load_checkpoint(ss);
    CHECK(back == net);
    CHECK(back.heads() == net.heads());
  }
  std::stringstream bad("concordia-mlp 1\ntask classification\nwidths 2 2\nheads 2\nw 0x1p+0\n");
  CHECK_THROWS(load_checkpoint(bad));
}

TEST_CASE("argmax ties go low") {
  std::vector<double> v = {0.25, 0.5, 0.5};
  CHECK(argmax(v) == 1);
}
