#include <doctest.h>

#include <cmath>

#include "kacl/gradcheck.hpp"
#include "kacl/ops.hpp"
#include "kacl/rng.hpp"
#include "kacl/tensor.hpp"

using namespace kacl;

namespace {
Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}
}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ConfigError);
  Tensor c = t.clone();
  c[0] = 99;
  CHECK(t[0] == 1.0);
  CHECK(c.id() != t.id());
  CHECK(Tensor::scalar(4.0).value() == 4.0);
  CHECK_THROWS_AS(t.value(), UsageError);
}

TEST_CASE("grad shape matches data") {
  Tensor t = Tensor::zeros({3, 4}, true);
  t.grad();
  CHECK(t.grad().size() == t.size());
}

TEST_CASE("conv2d worked cases") {
  // identity kernel on a 3x3 of ones
  Tensor ones = Tensor::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor kid = Tensor::from({1, 1, 1, 1}, {1.0});
  Tensor b0 = Tensor::zeros({1});
  Tensor out = ops::conv2d(ones, kid, b0, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(out[i] == 1.0);

  // 2x2 input [[1,2],[3,4]] with a 2x2 ones kernel -> 10
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor kones = Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor y = ops::conv2d(x, kones, b0, 1, 0);
  CHECK(y.size() == 1);
  CHECK(y[0] == 10.0);

  // H=5, k=3, pad=1, stride=2 -> H'=3
  Tensor x5 = Tensor::zeros({1, 1, 5, 5});
  Tensor k3 = Tensor::zeros({1, 1, 3, 3});
  CHECK(ops::conv2d(x5, k3, b0, 2, 1).shape() == Shape{1, 1, 3, 3});
}

TEST_CASE("activation and pooling worked cases") {
  Tensor r = ops::relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).value() == 0.5);
  Tensor g = ops::global_avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(g.shape() == Shape{1, 1});
  CHECK(g[0] == 2.5);
}

TEST_CASE("max_pool2d tie-break routes gradient to first element in scan order") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  Graph g;
  {
    Recording rec(g);
    Tensor p = ops::max_pool2d(x, 2, 2);
    CHECK(p.size() == 1);
    CHECK(p[0] == 5.0);
    g.backward(ops::sum(p));
  }
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("simple autodiff worked cases") {
  // d(x*x)/dx at 3 is 6
  Tensor x = Tensor::scalar(3.0, true);
  Graph g;
  {
    Recording rec(g);
    g.backward(ops::mul(x, x));
  }
  CHECK(x.grad()[0] == 6.0);

  // relu grad at -1 is 0
  Tensor y = Tensor::scalar(-1.0, true);
  Graph g2;
  {
    Recording rec(g2);
    g2.backward(ops::relu(y));
  }
  CHECK(y.grad()[0] == 0.0);
}

TEST_CASE("grad_check on every layer op") {
  Rng rng(11);
  auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                   const Tensor& x) {
    const double err = grad_check(f, x, 1e-5);
    INFO(name);
    CHECK(err < 1e-4);
  };

  check("add", [&](const Tensor& t) {
    return ops::sum(ops::add(t, Tensor::from({4}, {0.3, -0.2, 1.0, 2.0})));
  }, random_tensor(rng, {4}));
  check("scale", [&](const Tensor& t) { return ops::sum(ops::scale(t, -1.7)); },
        random_tensor(rng, {5}));
  check("mul", [&](const Tensor& t) {
    return ops::sum(ops::mul(t, Tensor::from({4}, {0.5, -2.0, 3.0, 0.1})));
  }, random_tensor(rng, {4}));
  check("reshape", [&](const Tensor& t) { return ops::batch_mean(ops::reshape(t, {2, 3})); },
        random_tensor(rng, {6}));
  check("sigmoid", [&](const Tensor& t) { return ops::sum(ops::sigmoid(t)); },
        random_tensor(rng, {6}));
  // keep relu probes away from the kink
  Tensor xr = random_tensor(rng, {6});
  for (std::size_t i = 0; i < xr.size(); ++i)
    if (std::abs(xr[i]) < 0.1) xr[i] = 0.5;
  check("relu", [&](const Tensor& t) { return ops::sum(ops::relu(t)); }, xr);

  Tensor w = random_tensor(rng, {3, 4}, false);
  Tensor b = random_tensor(rng, {3}, false);
  check("linear/x", [&](const Tensor& t) { return ops::sum(ops::linear(t, w, b)); },
        random_tensor(rng, {4}));
  Tensor xl = random_tensor(rng, {4}, false);
  check("linear/W", [&](const Tensor& t) { return ops::sum(ops::linear(xl, t, b)); },
        random_tensor(rng, {3, 4}));
  check("linear/b", [&](const Tensor& t) { return ops::sum(ops::linear(xl, w, t)); },
        random_tensor(rng, {3}));

  Tensor kern = random_tensor(rng, {2, 1, 3, 3}, false);
  Tensor cb = random_tensor(rng, {2}, false);
  check("conv2d/x", [&](const Tensor& t) { return ops::sum(ops::conv2d(t, kern, cb, 1, 1)); },
        random_tensor(rng, {1, 1, 5, 5}));
  Tensor ximg = random_tensor(rng, {1, 1, 5, 5}, false);
  check("conv2d/k", [&](const Tensor& t) { return ops::sum(ops::conv2d(ximg, t, cb, 1, 1)); },
        random_tensor(rng, {2, 1, 3, 3}));
  check("conv2d/b", [&](const Tensor& t) { return ops::sum(ops::conv2d(ximg, kern, t, 1, 1)); },
        random_tensor(rng, {2}));

  check("global_avg_pool",
        [&](const Tensor& t) { return ops::sum(ops::global_avg_pool(t)); },
        random_tensor(rng, {1, 2, 4, 4}));
  check("batch_mean", [&](const Tensor& t) { return ops::batch_mean(t); },
        random_tensor(rng, {7}));
  check("pick", [&](const Tensor& t) { return ops::pick(t, 3); }, random_tensor(rng, {5}));
  // max_pool: distinct values keep the argmax stable under probing
  Tensor xp = Tensor::from({1, 1, 4, 4},
                           {1, 9, 2, 8, 3, 7, 4, 6, 11, 5, 12, 0.5, 13, 0.25, 14, 0.125},
                           true);
  check("max_pool2d", [&](const Tensor& t) { return ops::sum(ops::max_pool2d(t, 2, 2)); }, xp);
}

TEST_CASE("grad_check validates eps range") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  auto f = [](const Tensor& t) { return ops::sum(t); };
  CHECK_THROWS_AS(grad_check(f, x, 1e-9), UsageError);
  CHECK_THROWS_AS(grad_check(f, x, 0.1), UsageError);
}

TEST_CASE("grad_check textbook cases") {
  // f(x)=sum(x^2), x=[1,2]
  Tensor x = Tensor::from({2}, {1, 2}, true);
  double err = grad_check([](const Tensor& t) { return ops::sum(ops::mul(t, t)); }, x, 1e-5);
  CHECK(err < 1e-8);
  // relu far from the kink
  Tensor y = Tensor::from({3}, {2.0, -3.0, 1.5}, true);
  err = grad_check([](const Tensor& t) { return ops::sum(ops::relu(t)); }, y, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("replay reproduces recorded outputs bit-for-bit") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {1, 1, 6, 6});
  Tensor kern = random_tensor(rng, {2, 1, 3, 3});
  Tensor cb = random_tensor(rng, {2});
  Graph g;
  Tensor out;
  {
    Recording rec(g);
    Tensor c = ops::conv2d(x, kern, cb, 1, 1);
    Tensor r = ops::relu(c);
    Tensor p = ops::max_pool2d(r, 2, 2);
    out = ops::batch_mean(p);
  }
  const std::vector<double> before = out.buffer();
  // clobber every node output, then replay
  for (std::size_t i = 0; i < g.size(); ++i) {
    Tensor o = g.node(i).output;
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = -123.0;
  }
  g.replay_forward();
  CHECK(out.buffer() == before);
}

TEST_CASE("backward is linear: grad of 2*loss is twice grad of loss") {
  Rng rng(5);
  Tensor x = random_tensor(rng, {6});
  Tensor w = random_tensor(rng, {3, 6}, false);
  Tensor b = random_tensor(rng, {3}, false);

  auto grads_for = [&](double c) {
    Tensor xc = x.clone();
    xc.set_requires_grad(true);
    Graph g;
    {
      Recording rec(g);
      Tensor loss = ops::scale(ops::sum(ops::sigmoid(ops::linear(xc, w, b))), c);
      g.backward(loss);
    }
    return xc.grad();
  };
  const auto g1 = grads_for(1.0);
  const auto g2 = grads_for(2.0);
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("isolated backward leaves Tensor::grad untouched") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Graph g;
  {
    Recording rec(g);
    Tensor loss = ops::sum(ops::mul(x, x));
    g.backward(loss, /*write_grads=*/false);
  }
  CHECK(!x.has_grad());
  const auto* gx = g.grad_of(x);
  REQUIRE(gx != nullptr);
  CHECK((*gx)[0] == 2.0);
  CHECK((*gx)[2] == 6.0);
}

TEST_CASE("shape validation errors") {
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ConfigError);
  CHECK_THROWS_AS(ops::linear(Tensor::zeros({4}), Tensor::zeros({3, 5}), Tensor::zeros({3})),
                  ConfigError);
  CHECK_THROWS_AS(ops::reshape(Tensor::zeros({4}), {3}), ConfigError);
  CHECK_THROWS_AS(ops::pick(Tensor::zeros({4}), 9), UsageError);
}
