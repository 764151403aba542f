#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "ustrack/losses.hpp"
#include "ustrack/rng.hpp"

using namespace ustrack;

namespace {
constexpr double kPi = 3.14159265358979323846;

Tensor rand_tensor(Shape shape, Rng& rng, bool rg = true) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(v), std::move(shape), rg);
}
}  // namespace

TEST_CASE("attention_loss basic cases") {
  SECTION("perfect prediction and identical patches") {
    Tensor pred = Tensor::from({0.1, -0.2, 0.05, 0.0}, {4});
    BoxDelta gt{0.1, -0.2, 0.05, 0.0};
    std::vector<double> u{0.5, 0.5}, v{0.5, 0.5};
    CHECK(attention_loss(pred, gt, u, v, 2).item() == 0.0);
  }
  SECTION("single unit delta error") {
    Tensor pred = Tensor::from({1.0, 0.0, 0.0, 0.0}, {4});
    BoxDelta gt{0.0, 0.0, 0.0, 0.0};
    std::vector<double> u{0.3}, v{0.3};
    CHECK(attention_loss(pred, gt, u, v, 1).item() == Catch::Approx(1.0));
  }
  SECTION("patch term: constant difference 2 over 4 pixels") {
    Tensor pred = Tensor::from({0.0, 0.0, 0.0, 0.0}, {4});
    BoxDelta gt{};
    std::vector<double> u{2.0, 2.0, 2.0, 2.0}, v{0.0, 0.0, 0.0, 0.0};
    CHECK(attention_loss(pred, gt, u, v, 4).item() == Catch::Approx(4.0));
  }
  SECTION("empty intersection drops the patch term and logs") {
    int warnings = 0;
    set_log_handler([&](const std::string&) { ++warnings; });
    Tensor pred = Tensor::from({1.0, 0.0, 0.0, 0.0}, {4});
    BoxDelta gt{};
    CHECK(attention_loss(pred, gt, {}, {}, 0).item() == Catch::Approx(1.0));
    CHECK(warnings == 1);
    set_log_handler([](const std::string&) {});
  }
  SECTION("gradient flows through the deltas") {
    Rng rng(2);
    Tensor pred = rand_tensor({4}, rng);
    BoxDelta gt{0.2, -0.1, 0.3, 0.05};
    std::vector<double> u{0.1, 0.9}, v{0.4, 0.2};
    auto f = [&]() { return attention_loss(pred, gt, u, v, 2); };
    CHECK(grad_check(f, {pred}, 1e-5) < 1e-6);
  }
}

TEST_CASE("margin_cls_loss basic cases") {
  MarginConfig cfg;
  cfg.layers = {"input"};
  std::vector<LayerGrads> grads{{"input", {1.0, 0.0}, {0.0, 1.0}}};  // diff norm sqrt(2)

  SECTION("dominant true score deactivates the hinge") {
    Tensor f_o = Tensor::scalar(-100.0);
    Tensor f_t = Tensor::scalar(100.0);
    CHECK(margin_cls_loss(f_o, f_t, grads, cfg).item() == 0.0);
  }
  SECTION("equal scores leave exactly gamma per layer") {
    Tensor f_o = Tensor::scalar(1.5);
    Tensor f_t = Tensor::scalar(1.5);
    MarginConfig two = cfg;
    two.layers = {"input", "hidden"};
    std::vector<LayerGrads> g2 = grads;
    g2.push_back(LayerGrads{"hidden", {2.0}, {0.0}});
    CHECK(margin_cls_loss(f_o, f_t, g2, two).item() == Catch::Approx(2.0 * two.margin_gamma));
  }
  SECTION("hand-evaluated hinge value") {
    // gamma=1, f_o - f_t = 1, grad-diff norm 1, eps = 1e-6
    std::vector<LayerGrads> g{{"input", {1.0}, {0.0}}};
    Tensor f_o = Tensor::scalar(1.0);
    Tensor f_t = Tensor::scalar(0.0);
    const double expected = 1.0 + 1.0 / (1.0 + 1e-6);
    CHECK(margin_cls_loss(f_o, f_t, g, cfg).item() == Catch::Approx(expected).epsilon(1e-12));
    CHECK(margin_cls_loss(f_o, f_t, g, cfg).item() == Catch::Approx(1.999999).margin(1e-5));
  }
  SECTION("missing layer gradient is rejected with the layer id") {
    Tensor f_o = Tensor::scalar(0.0);
    Tensor f_t = Tensor::scalar(0.0);
    MarginConfig both = cfg;
    both.layers = {"input", "hidden"};
    REQUIRE_THROWS_WITH(margin_cls_loss(f_o, f_t, grads, both),
                        Catch::Matchers::ContainsSubstring("hidden"));
  }
  SECTION("true-class overload picks the right scores") {
    std::array<Tensor, 2> scores{Tensor::scalar(2.0), Tensor::scalar(2.0)};
    CHECK(margin_cls_loss(scores, grads, 1, cfg).item() == Catch::Approx(cfg.margin_gamma));
  }
  SECTION("loss is nonnegative and differentiable away from the kink") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      Tensor f_o = Tensor::scalar(rng.uniform(-2, 2), true);
      Tensor f_t = Tensor::scalar(rng.uniform(-2, 2), true);
      auto f = [&]() { return margin_cls_loss(f_o, f_t, grads, cfg); };
      const double val = f().item();
      REQUIRE(val >= 0.0);
      const double u = (f_o.item() - f_t.item()) / (cfg.eps + std::sqrt(2.0));
      if (std::abs(cfg.margin_gamma + u) > 1e-3)  // away from the hinge kink
        REQUIRE(grad_check(f, {f_o, f_t}, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("margin_phi basic cases") {
  SECTION("m = 1 reduces to cosine") {
    CHECK(margin_phi(kPi / 3.0, 1) == Catch::Approx(0.5).epsilon(1e-12));
  }
  SECTION("m = 2 at zero") { CHECK(margin_phi(0.0, 2) == 1.0); }
  SECTION("m = 2 at 3pi/4 lands in the second piece") {
    CHECK(margin_phi(3.0 * kPi / 4.0, 2) == Catch::Approx(-2.0).epsilon(1e-12));
  }
  SECTION("domain is enforced") {
    REQUIRE_THROWS_AS(margin_phi(-0.1, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(margin_phi(kPi + 0.1, 2), std::invalid_argument);
  }
}

TEST_CASE("margin_phi continuity, monotonicity, cosine bound") {
  for (int m = 1; m <= 4; ++m) {
    SECTION("piece boundaries are continuous, m=" + std::to_string(m)) {
      for (int k = 1; k < m; ++k) {
        const double boundary = k * kPi / m;
        const double eps = 1e-9;
        CHECK(std::abs(margin_phi(boundary - eps, m) - margin_phi(boundary, m)) < 1e-7);
        CHECK(std::abs(margin_phi(boundary + eps, m) - margin_phi(boundary, m)) < 1e-7);
        // the closed-form one-sided limits agree to 1e-12
        const double from_left = (((k - 1) % 2 == 0) ? 1.0 : -1.0) * std::cos(k * kPi) -
                                 2.0 * (k - 1);
        const double from_right = ((k % 2 == 0) ? 1.0 : -1.0) * std::cos(k * kPi) - 2.0 * k;
        CHECK(std::abs(from_left - from_right) < 1e-12);
      }
    }
    SECTION("nonincreasing and below cosine on a dense grid, m=" + std::to_string(m)) {
      double prev = margin_phi(0.0, m);
      for (int i = 1; i <= 10000; ++i) {
        const double theta = kPi * i / 10000.0;
        const double v = margin_phi(theta, m);
        REQUIRE(v <= prev + 1e-12);
        REQUIRE(v <= std::cos(theta) + 1e-12);
        prev = v;
      }
    }
  }
}

TEST_CASE("mask_loss basic cases") {
  SECTION("symmetric two-class case gives ln 2 per pixel") {
    // equal-norm class weights, features equidistant in angle from both
    Tensor features = Tensor::from({1.0, 1.0, 2.0, 2.0}, {2, 2});
    Tensor weights = Tensor::from({1.0, 0.0, 0.0, 1.0}, {2, 2});
    MaskLossConfig cfg;
    cfg.margin_m = 1;
    cfg.weight_decay = 0.0;
    CHECK(mask_loss(features, weights, {1, 0}, cfg).item() ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SECTION("weight decay adds exactly lambda * ||W||_F^2") {
    Rng rng(7);
    Tensor features = rand_tensor({4, 3}, rng, false);
    Tensor weights = rand_tensor({2, 3}, rng, false);
    std::vector<int> labels{0, 1, 1, 0};
    MaskLossConfig base;
    base.margin_m = 2;
    base.weight_decay = 0.0;
    MaskLossConfig decayed = base;
    decayed.weight_decay = 0.05;
    double fro = 0.0;
    for (double w : weights.values()) fro += w * w;
    CHECK(mask_loss(features, weights, labels, decayed).item() ==
          Catch::Approx(mask_loss(features, weights, labels, base).item() + 0.05 * fro)
              .epsilon(1e-12));
  }
  SECTION("matches the independent transliteration on random instances") {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
      const int P = 1 + static_cast<int>(rng.uniform_index(8));
      const int d = 2 + static_cast<int>(rng.uniform_index(4));
      Tensor features = rand_tensor({P, d}, rng, false);
      Tensor weights = rand_tensor({2, d}, rng, false);
      std::vector<int> labels(static_cast<std::size_t>(P));
      for (auto& l : labels) l = static_cast<int>(rng.uniform_index(2));
      const int m = 1 + static_cast<int>(rng.uniform_index(4));
      const double lambda = rng.uniform(0.0, 0.01);

      std::vector<std::vector<double>> fx(static_cast<std::size_t>(P)), wx(2);
      for (int i = 0; i < P; ++i)
        for (int q = 0; q < d; ++q)
          fx[static_cast<std::size_t>(i)].push_back(
              features.values()[static_cast<std::size_t>(i) * d + q]);
      for (int j = 0; j < 2; ++j)
        for (int q = 0; q < d; ++q)
          wx[static_cast<std::size_t>(j)].push_back(
              weights.values()[static_cast<std::size_t>(j) * d + q]);

      MaskLossConfig cfg;
      cfg.margin_m = m;
      cfg.weight_decay = lambda;
      const double got = mask_loss(features, weights, labels, cfg).item();
      const double want = oracle::scalar_mask_loss(fx, wx, labels, m, lambda);
      REQUIRE(got == Catch::Approx(want).margin(1e-10));
    }
  }
  SECTION("zero-norm pixels are skipped and counted") {
    set_log_handler([](const std::string&) {});
    Tensor features = Tensor::from({0.0, 0.0, 1.0, 2.0}, {2, 2});
    Tensor weights = Tensor::from({1.0, 0.0, 0.0, 1.0}, {2, 2});
    MaskLossConfig cfg;
    int skipped = 0;
    const double v = mask_loss(features, weights, {1, 1}, cfg, &skipped).item();
    CHECK(skipped == 1);
    CHECK(std::isfinite(v));
  }
  SECTION("gradients pass the finite-difference check") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor features = rand_tensor({3, 4}, rng);
      Tensor weights = rand_tensor({2, 4}, rng);
      std::vector<int> labels{1, 0, 1};
      MaskLossConfig cfg;
      cfg.margin_m = 2;
      cfg.weight_decay = 1e-3;
      auto f = [&]() { return mask_loss(features, weights, labels, cfg); };
      REQUIRE(grad_check(f, {features, weights}, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("smooth_l1 basic cases") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(1.0) == 0.5);   // linear branch at the boundary
  CHECK(0.5 * 1.0 * 1.0 == 0.5);  // quadratic branch agrees there
  CHECK(smooth_l1(2.0) == 1.5);
  CHECK(smooth_l1(-2.0) == 1.5);
  SECTION("continuity near the kink") {
    CHECK(smooth_l1(1.0 - 1e-9) == Catch::Approx(0.5).margin(1e-8));
    CHECK(smooth_l1(1.0 + 1e-9) == Catch::Approx(0.5).margin(1e-8));
  }
  SECTION("derivative is u inside and sign(u) outside") {
    for (double u : {-1.7, -0.6, 0.3, 1.9}) {
      const double fd = oracle::central_diff([](double v) { return smooth_l1(v); }, u);
      const double expected = std::abs(u) < 1.0 ? u : (u > 0 ? 1.0 : -1.0);
      CHECK(fd == Catch::Approx(expected).margin(1e-6));
    }
  }
  SECTION("taped elementwise version differentiates away from the kink") {
    Tensor u = Tensor::from({-1.7, -0.6, 0.3, 1.9, 2.4, -0.05}, {6}, true);
    auto f = [&]() { return sum(smooth_l1(u)); };
    CHECK(grad_check(f, {u}, 1e-6) < 1e-4);
  }
}

TEST_CASE("box_loss basic cases") {
  SECTION("perfect predictions") {
    std::vector<Tensor> preds{Tensor::from({0.1, 0.2}, {2})};
    std::vector<std::pair<double, double>> targets{{0.1, 0.2}};
    CHECK(box_loss(preds, targets).item() == 0.0);
  }
  SECTION("hand evaluation: residuals (1,2) -> 0.5 + 1.5") {
    std::vector<Tensor> preds{Tensor::from({1.0, 2.0}, {2})};
    std::vector<std::pair<double, double>> targets{{0.0, 0.0}};
    CHECK(box_loss(preds, targets).item() == Catch::Approx(2.0));
  }
  SECTION("ten samples of residual 0.1 sum to 0.1") {
    std::vector<Tensor> preds;
    std::vector<std::pair<double, double>> targets;
    for (int i = 0; i < 10; ++i) {
      preds.push_back(Tensor::from({0.1, 0.1}, {2}));
      targets.emplace_back(0.0, 0.0);
    }
    CHECK(box_loss(preds, targets).item() == Catch::Approx(0.1).epsilon(1e-12));
  }
  SECTION("length mismatch is rejected") {
    std::vector<Tensor> preds{Tensor::from({0.0, 0.0}, {2})};
    REQUIRE_THROWS_AS(box_loss(preds, {}), std::invalid_argument);
  }
  SECTION("gradients flow through every sample") {
    Rng rng(19);
    Tensor p1 = rand_tensor({2}, rng);
    Tensor p2 = rand_tensor({2}, rng);
    std::vector<std::pair<double, double>> targets{{0.3, -0.4}, {-0.2, 0.1}};
    auto f = [&]() { return box_loss({p1, p2}, targets); };
    CHECK(grad_check(f, {p1, p2}, 1e-6) < 1e-4);
  }
}

TEST_CASE("combined_loss basic cases") {
  LossWeights w;
  CHECK(w.cls == 0.2);
  CHECK(w.mask == 0.2);
  CHECK(w.box == 0.6);
  auto c = [&](double a, double b, double d) {
    return combined_loss(Tensor::scalar(a), Tensor::scalar(b), Tensor::scalar(d), w).item();
  };
  CHECK(c(0, 0, 0) == 0.0);
  CHECK(c(1, 1, 1) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(c(2, 0, 5) == Catch::Approx(3.4).epsilon(1e-12));
}

TEST_CASE("losses are nonnegative and finite on random finite inputs") {
  Rng rng(23);
  for (int i = 0; i < 30; ++i) {
    Tensor pred = rand_tensor({4}, rng, false);
    BoxDelta gt{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                rng.uniform(-1, 1)};
    std::vector<double> u{rng.uniform(0, 1)}, v{rng.uniform(0, 1)};
    const double att = attention_loss(pred, gt, u, v, 1).item();
    REQUIRE(att >= 0.0);
    REQUIRE(std::isfinite(att));

    Tensor features = rand_tensor({3, 3}, rng, false);
    Tensor weights = rand_tensor({2, 3}, rng, false);
    MaskLossConfig mc;
    const double ml = mask_loss(features, weights, {0, 1, 0}, mc).item();
    REQUIRE(ml >= 0.0);
    REQUIRE(std::isfinite(ml));
  }
}
