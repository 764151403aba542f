#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "ustrack/checkpoint.hpp"
#include "ustrack/rng.hpp"
#include "ustrack/tensor.hpp"

using namespace ustrack;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool rg = true, double lo = -1.0,
                   double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(v), std::move(shape), rg);
}

}  // namespace

TEST_CASE("affine basic cases") {
  Tensor x = Tensor::from({3.0, 4.0}, {2});

  SECTION("identity weights") {
    Tensor W = Tensor::from({1.0, 0.0, 0.0, 1.0}, {2, 2});
    Tensor b = Tensor::zeros({2});
    auto y = affine(x, W, b);
    CHECK(y.values()[0] == 3.0);
    CHECK(y.values()[1] == 4.0);
  }
  SECTION("zero weights pass the bias through") {
    Tensor W = Tensor::zeros({2, 2});
    Tensor b = Tensor::from({1.0, 2.0}, {2});
    auto y = affine(x, W, b);
    CHECK(y.values()[0] == 1.0);
    CHECK(y.values()[1] == 2.0);
  }
  SECTION("hand-computed matrix multiply") {
    Tensor W = Tensor::from({1.0, 2.0, 3.0, 4.0}, {2, 2});
    Tensor b = Tensor::zeros({2});
    Tensor xs = Tensor::from({1.0, 1.0}, {2});
    auto y = affine(xs, W, b);
    CHECK(y.values()[0] == 3.0);
    CHECK(y.values()[1] == 7.0);
  }
  SECTION("shape mismatch reports dimensions") {
    Tensor W = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2});
    REQUIRE_THROWS_WITH(affine(x, W, b), Catch::Matchers::ContainsSubstring("[2x3]"));
  }
}

TEST_CASE("conv2d basic cases") {
  SECTION("1x1 identity kernel") {
    Tensor x = Tensor::from({1.0, 2.0, 3.0, 4.0}, {2, 2});
    Tensor k = Tensor::from({1.0}, {1, 1});
    auto y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{2, 2});
    CHECK(y.values() == x.values());
  }
  SECTION("3x3 ones kernel on constant image") {
    const double c = 2.5;
    Tensor x = Tensor::full({5, 5}, c);
    Tensor k = Tensor::full({3, 3}, 1.0);
    auto y = conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == Shape{3, 3});
    for (double v : y.values()) CHECK(v == Catch::Approx(9.0 * c).epsilon(1e-12));
  }
  SECTION("shape formula 100 -> 50 with stride 2 pad 1") {
    Tensor x = Tensor::zeros({100, 100});
    Tensor k = Tensor::zeros({3, 3});
    auto y = conv2d(x, k, 2, 1);
    CHECK(y.shape() == Shape{50, 50});
  }
  SECTION("kernel larger than padded input is rejected") {
    Tensor x = Tensor::zeros({2, 2});
    Tensor k = Tensor::zeros({5, 5});
    REQUIRE_THROWS_AS(conv2d(x, k, 1, 0), std::invalid_argument);
  }
}

TEST_CASE("conv2d output shape obeys the floor formula (property sweep)") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int H = 1 + static_cast<int>(rng.uniform_index(40));
    const int W = 1 + static_cast<int>(rng.uniform_index(40));
    const int kh = 1 + static_cast<int>(rng.uniform_index(7));
    const int kw = 1 + static_cast<int>(rng.uniform_index(7));
    const int stride = 1 + static_cast<int>(rng.uniform_index(4));
    const int pad = static_cast<int>(rng.uniform_index(4));
    if (H + 2 * pad < kh || W + 2 * pad < kw) continue;
    Tensor x = Tensor::zeros({H, W});
    Tensor k = Tensor::zeros({kh, kw});
    auto y = conv2d(x, k, stride, pad);
    REQUIRE(y.dim(0) == (H + 2 * pad - kh) / stride + 1);
    REQUIRE(y.dim(1) == (W + 2 * pad - kw) / stride + 1);
  }
}

TEST_CASE("activations") {
  Tensor x = Tensor::from({0.0, -1.0, 2.0}, {3});
  CHECK(activation(x, Act::Sigmoid).values()[0] == 0.5);
  CHECK(activation(x, Act::Tanh).values()[0] == 0.0);
  CHECK(activation(x, Act::Relu).values()[1] == 0.0);
  CHECK(activation(x, Act::Relu).values()[2] == 2.0);
}

TEST_CASE("backward basics") {
  SECTION("d(x*x)/dx at 3 is 6") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(mul(x, x));
    CHECK(x.grad()[0] == Catch::Approx(6.0));
  }
  SECTION("sum of affine gives grad W_ij = x_j") {
    Tensor x = Tensor::from({2.0, -1.5, 0.5}, {3});
    Tensor W = Tensor::zeros({2, 3}, true);
    Tensor b = Tensor::zeros({2});
    backward(sum(affine(x, W, b)));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(W.grad()[static_cast<std::size_t>(i) * 3 + j] ==
              Catch::Approx(x.values()[static_cast<std::size_t>(j)]));
  }
  SECTION("sigmoid chain matches central finite difference") {
    Rng rng(3);
    Tensor w = rand_tensor({4}, rng);
    Tensor x = rand_tensor({4}, rng, false);
    auto f = [&]() {
      Tensor W = reshape(w, {1, 4});
      return pick(activation(affine(x, W, Tensor::zeros({1})), Act::Sigmoid), 0);
    };
    CHECK(grad_check(f, {w}, 1e-5) < 1e-4);
  }
  SECTION("non-scalar loss is rejected") {
    Tensor x = Tensor::zeros({3}, true);
    REQUIRE_THROWS_AS(backward(x), std::invalid_argument);
  }
  SECTION("repeated backward accumulates on leaves") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(mul(x, x));
    backward(mul(x, x));
    CHECK(x.grad()[0] == Catch::Approx(12.0));
    x.zero_grad();
    backward(mul(x, x));
    CHECK(x.grad()[0] == Catch::Approx(6.0));
  }
}

TEST_CASE("grad_check basics") {
  SECTION("sum of squares") {
    Rng rng(5);
    Tensor p = rand_tensor({6}, rng);
    auto f = [&]() { return sum(mul(p, p)); };
    CHECK(grad_check(f, {p}, 1e-5) < 1e-6);
  }
  SECTION("constant function has zero deviation") {
    Tensor p = Tensor::from({1.0, 2.0}, {2}, true);
    auto f = [&]() { return Tensor::scalar(42.0); };
    CHECK(grad_check(f, {p}, 1e-5) == 0.0);
  }
}

TEST_CASE("primitive gradients match finite differences at random points") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = rand_tensor({5}, rng);
    Tensor W = rand_tensor({3, 5}, rng);
    Tensor b = rand_tensor({3}, rng);
    auto f_affine = [&]() { return sum(mul(affine(x, W, b), affine(x, W, b))); };
    REQUIRE(grad_check(f_affine, {x, W, b}, 1e-5) < 1e-4);

    Tensor img = rand_tensor({6, 6}, rng);
    Tensor ker = rand_tensor({3, 3}, rng);
    auto f_conv = [&]() {
      Tensor y = conv2d(img, ker, 2, 1);
      return sum(mul(y, y));
    };
    REQUIRE(grad_check(f_conv, {img, ker}, 1e-5) < 1e-4);

    Tensor z = rand_tensor({4}, rng);
    for (auto kind : {Act::Sigmoid, Act::Tanh}) {
      auto f_act = [&]() { return sum(mul(activation(z, kind), activation(z, kind))); };
      REQUIRE(grad_check(f_act, {z}, 1e-5) < 1e-4);
    }

    Tensor stack = rand_tensor({2, 5, 5}, rng);
    Tensor kers = rand_tensor({3, 2, 3, 3}, rng);
    Tensor bias = rand_tensor({3}, rng);
    auto f_stack = [&]() {
      Tensor y = conv2d_stack(stack, kers, bias, 2, 1);
      return sum(mul(y, y));
    };
    REQUIRE(grad_check(f_stack, {stack, kers, bias}, 1e-5) < 1e-4);

    Tensor m = rand_tensor({2, 4, 4}, rng);
    auto f_win = [&]() {
      Tensor y = sample_window(m, 0.5, 0.5, 3.0, 3.0, 3, 3);
      return sum(mul(y, y));
    };
    REQUIRE(grad_check(f_win, {m}, 1e-5) < 1e-4);
  }
}

TEST_CASE("backward is linear: grads of a+b equal the sum of separate grads") {
  Rng rng(23);
  Tensor p = rand_tensor({6}, rng);
  Tensor c1 = rand_tensor({6}, rng, false);
  Tensor c2 = rand_tensor({6}, rng, false);

  auto fa = [&]() { return sum(mul(p, c1)); };
  auto fb = [&]() { return sum(mul(mul(p, p), c2)); };

  p.zero_grad();
  backward(fa());
  auto ga = p.grad();
  p.zero_grad();
  backward(fb());
  auto gb = p.grad();
  p.zero_grad();
  backward(add(fa(), fb()));
  auto gsum = p.grad();
  for (std::size_t i = 0; i < gsum.size(); ++i)
    CHECK(gsum[i] == Catch::Approx(ga[i] + gb[i]).margin(1e-14));
}

TEST_CASE("replaying a taped graph is bitwise deterministic") {
  Rng rng(31);
  Tensor x = rand_tensor({4, 8, 8}, rng);
  Tensor k = rand_tensor({4, 4, 3, 3}, rng);
  Tensor b = rand_tensor({4}, rng);

  auto run = [&]() {
    clear_grads({x, k, b});
    Tensor y = activation(conv2d_stack(x, k, b, 2, 1), Act::Tanh);
    Tensor loss = sum(mul(y, y));
    backward(loss);
    return std::make_tuple(loss.item(), x.grad(), k.grad());
  };
  auto [l1, gx1, gk1] = run();
  auto [l2, gx2, gk2] = run();
  CHECK(l1 == l2);
  CHECK(gx1 == gx2);
  CHECK(gk1 == gk2);
}

TEST_CASE("checked mode rejects non-finite values") {
  set_checked_mode(true);
  Tensor x = Tensor::from({1.0, 2.0}, {2});
  Tensor y = Tensor::from({1e308, 1e308}, {2});
  REQUIRE_THROWS_AS(mul(add(y, y), x), std::runtime_error);
  set_checked_mode(false);
}

TEST_CASE("no-grad mode builds no graph") {
  Tensor p = Tensor::from({2.0}, {1}, true);
  Tensor y;
  {
    NoGradGuard ng;
    y = mul(p, p);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(41);
  NamedParams params;
  params.emplace_back("alpha", rand_tensor({3, 4}, rng));
  params.emplace_back("beta", Tensor::from({0.1, -0.0, 1e-300, 3.141592653589793}, {4}));
  std::map<std::string, std::string> manifest{{"layers", "2"}, {"note", "round trip"}};

  const std::string path = (std::filesystem::temp_directory_path() / "ustrack_ckpt_test.bin").string();
  write_checkpoint(path, manifest, params);
  Checkpoint ck = read_checkpoint(path);
  REQUIRE(ck.manifest == manifest);
  REQUIRE(ck.params.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(ck.params[i].first == params[i].first);
    CHECK(ck.params[i].second.shape() == params[i].second.shape());
    REQUIRE(ck.params[i].second.values() == params[i].second.values());
  }

  // Writing the loaded checkpoint again reproduces identical bytes.
  const std::string path2 = path + ".again";
  write_checkpoint(path2, ck.manifest, ck.params);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}
