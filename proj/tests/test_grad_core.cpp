#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "metaemb/errors.hpp"
#include "metaemb/finite_diff.hpp"
#include "metaemb/ops.hpp"
#include "metaemb/optim.hpp"

using namespace metaemb;
using namespace metaemb::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Random tensor whose entries stay at least `gap` away from zero.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double gap) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& v : t.values()) v = v < 0 ? v - gap : v + gap;
  return t;
}

using Builder = std::function<Var(Var)>;

// Reduces op(x) to a scalar with fixed random weights and compares the tape
// gradient with central differences.
double op_gradient_error(const Builder& op, const Tensor& x0, std::mt19937_64& rng) {
  Tensor weights;
  {
    Tape probe;
    weights = random_tensor(op(probe.leaf(x0)).shape(), rng);
  }
  auto loss_value = [&](const Tensor& x) {
    Tape t;
    return sum(mul(op(t.leaf(x)), constant(t, weights))).value().item();
  };
  Tape t;
  Var x = t.leaf(x0);
  Var loss = sum(mul(op(x), constant(t, weights)));
  return relative_error(grad(loss, x), numeric_gradient(loss_value, x0, 1e-5));
}

}  // namespace

TEST_CASE("primitive forward examples") {
  Tape t;
  CHECK(sigmoid(t.leaf(Tensor::vector({0.0}))).value()[0] == 0.5);
  CHECK(ad::tanh(t.leaf(Tensor::vector({0.0}))).value()[0] == 0.0);
  Var m = t.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  Var r = gather_row(m, 1);
  CHECK(r.shape() == Shape{2});
  CHECK(r.value()[0] == 3.0);
  CHECK(r.value()[1] == 4.0);
}

TEST_CASE("primitive errors name the op and shapes") {
  Tape t;
  Var a = t.leaf(Tensor(Shape{2, 3}));
  Var b = t.leaf(Tensor(Shape{3, 2}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(gather_row(a, 2), IndexError);
  const std::uint32_t idx[] = {0, 5};
  CHECK_THROWS_AS(gather_rows(a, idx), IndexError);
}

TEST_CASE("bce_loss examples") {
  Tape t;
  auto loss = [&](double p, double y) {
    return bce_loss(t.leaf(Tensor::vector({p})), Tensor::vector({y})).value().item();
  };
  CHECK(loss(0.5, 1) == doctest::Approx(0.6931472).epsilon(1e-6));
  CHECK(loss(1 - 1e-7, 1) == doctest::Approx(1e-7).epsilon(1e-3));
  CHECK(loss(0.9, 0) == doctest::Approx(2.3025851).epsilon(1e-6));
  CHECK_THROWS_AS(loss(0.5, 2), ValidationError);
  // Clipping keeps the loss finite at the extremes.
  CHECK(std::isfinite(loss(0.0, 1)));
  CHECK(std::isfinite(loss(1.0, 0)));
  CHECK(loss(0.0, 1) == doctest::Approx(-std::log(kProbEpsilon)));
}

TEST_CASE("grad examples") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2, 3}));
  Tensor g = grad(sum(square(x)), x);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);

  Var unused = t.leaf(Tensor(Shape{2, 2}, 7.0));
  Tensor z = grad(sum(square(x)), unused);
  CHECK(z.shape() == Shape{2, 2});
  for (double v : z.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(grad(square(x), x), ShapeError);
}

TEST_CASE("grad of logistic loss matches finite differences") {
  std::mt19937_64 rng(7);
  const Tensor feats = random_tensor(Shape{5, 1}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w0 = random_tensor(Shape{1, 5}, rng, -2, 2);
    const double y = trial % 2;
    auto f = [&](const Tensor& w) {
      Tape t;
      return bce_loss(sigmoid(matmul(t.leaf(w), t.leaf(feats))), Tensor(Shape{1, 1}, y)).value().item();
    };
    Tape t;
    Var w = t.leaf(w0);
    Tensor g = grad(bce_loss(sigmoid(matmul(w, t.leaf(feats))), Tensor(Shape{1, 1}, y)), w);
    CHECK(relative_error(g, numeric_gradient(f, w0, 1e-5)) < 1e-4);
  }
}

TEST_CASE("hvp of a quadratic form is A v") {
  const Tensor a = Tensor::matrix({{2, 1}, {1, 3}});
  auto quad_hvp = [&](const Tensor& v) {
    Tape t;
    Var x = t.leaf(Tensor::matrix({{0.3}, {-0.7}}));
    Var loss = scale(sum(mul(x, matmul(t.leaf(a), x))), 0.5);
    return hvp(loss, x, v);
  };
  Tensor h = quad_hvp(Tensor::matrix({{1}, {0}}));
  CHECK(h[0] == doctest::Approx(2.0));
  CHECK(h[1] == doctest::Approx(1.0));

  Tensor zero = quad_hvp(Tensor::matrix({{0}, {0}}));
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);

  // Symmetry of the Hessian for a random symmetric A.
  std::mt19937_64 rng(3);
  Tensor s = random_tensor(Shape{4, 4}, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < i; ++j) s.at(i, j) = s.at(j, i);
  auto basis_hvp = [&](std::size_t j) {
    Tape t;
    Var x = t.leaf(random_tensor(Shape{4, 1}, rng));
    Var loss = scale(sum(mul(x, matmul(t.leaf(s), x))), 0.5);
    Tensor e(Shape{4, 1});
    e[j] = 1.0;
    return hvp(loss, x, e);
  };
  for (std::size_t j = 0; j < 4; ++j) {
    Tensor hj = basis_hvp(j);
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(hj[k] - basis_hvp(k)[j]) <= 1e-10);
  }
}

TEST_CASE("double-backprop hvp matches finite differences of the gradient") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor c = random_tensor(Shape{4, 1}, rng, -2, 2);
    const Tensor phi0 = random_tensor(Shape{1, 4}, rng);
    const Tensor v = random_tensor(Shape{1, 4}, rng);
    const Tensor y(Shape{1, 1}, trial % 2);
    auto loss_of = [&](Var phi) { return bce_loss(sigmoid(matmul(phi, constant(phi.tape(), c))), y); };
    auto grad_fn = [&](const Tensor& phi) {
      Tape t;
      Var p = t.leaf(phi);
      return grad(loss_of(p), p);
    };
    Tape t;
    Var phi = t.leaf(phi0);
    Tensor h = hvp(loss_of(phi), phi, v);
    CHECK(relative_error(h, numeric_hvp(grad_fn, phi0, v, 1e-4)) < 1e-3);
  }
}

TEST_CASE("every primitive's gradient matches finite differences") {
  std::mt19937_64 rng(2024);
  const std::vector<std::uint32_t> cols = {2, 0, 2, 1};
  const std::vector<std::vector<std::uint32_t>> bags = {{0, 2}, {}, {1}, {3, 3, 0}};
  const Tensor other = random_tensor(Shape{3, 4}, rng);
  const Tensor rhs = random_tensor(Shape{4, 2}, rng);

  struct Case {
    const char* name;
    Builder op;
    std::function<Tensor()> input;
  };
  const Shape s34{3, 4};
  std::vector<Case> cases = {
      {"add", [&](Var x) { return add(x, constant(x.tape(), other)); }, [&] { return random_tensor(s34, rng); }},
      {"sub", [&](Var x) { return sub(constant(x.tape(), other), x); }, [&] { return random_tensor(s34, rng); }},
      {"mul", [&](Var x) { return mul(x, x); }, [&] { return random_tensor(s34, rng); }},
      {"matmul", [&](Var x) { return matmul(x, constant(x.tape(), rhs)); }, [&] { return random_tensor(s34, rng); }},
      {"matmul_rhs", [&](Var x) { return matmul(constant(x.tape(), other), x); },
       [&] { return random_tensor(Shape{4, 2}, rng); }},
      {"transpose", [&](Var x) { return transpose(x); }, [&] { return random_tensor(s34, rng); }},
      {"gather_row", [&](Var x) { return gather_row(x, 1); }, [&] { return random_tensor(s34, rng); }},
      {"avg_pool_rows", [&](Var x) { return avg_pool_rows(x, bags); }, [&] { return random_tensor(Shape{4, 3}, rng); }},
      {"concat", [&](Var x) {
         const Var parts[] = {x, square(x), constant(x.tape(), other)};
         return concat_cols(parts);
       }, [&] { return random_tensor(s34, rng); }},
      {"select_cols", [&](Var x) { return select_cols(x, cols); }, [&] { return random_tensor(s34, rng); }},
      {"scatter_cols", [&](Var x) { return scatter_cols(x, cols, 5); }, [&] { return random_tensor(s34, rng); }},
      {"sum_cols", [&](Var x) { return sum_cols(x); }, [&] { return random_tensor(s34, rng); }},
      {"broadcast_rows", [&](Var x) { return broadcast_rows(x, 3); }, [&] { return random_tensor(Shape{1, 4}, rng); }},
      {"mean", [&](Var x) { return mean(square(x)); }, [&] { return random_tensor(s34, rng); }},
      {"sum", [&](Var x) { return sum(square(x)); }, [&] { return random_tensor(s34, rng); }},
      {"scale", [&](Var x) { return scale(x, -2.5); }, [&] { return random_tensor(s34, rng); }},
      {"sigmoid", [&](Var x) { return sigmoid(x); }, [&] { return random_tensor(s34, rng, -4, 4); }},
      {"tanh", [&](Var x) { return ad::tanh(x); }, [&] { return random_tensor(s34, rng, -3, 3); }},
      {"relu", [&](Var x) { return relu(x); }, [&] { return away_from_zero(s34, rng, 1e-3); }},
      {"square", [&](Var x) { return square(x); }, [&] { return random_tensor(s34, rng); }},
      {"log", [&](Var x) { return ad::log(x); }, [&] { return random_tensor(s34, rng, 0.2, 3); }},
      {"reciprocal", [&](Var x) { return reciprocal(x); }, [&] { return random_tensor(s34, rng, 0.3, 3); }},
      {"clip", [&](Var x) { return clip(x, -0.5, 0.5); }, [&] {
         Tensor t = random_tensor(s34, rng);
         for (double& v : t.values())
           if (std::abs(std::abs(v) - 0.5) < 1e-3) v = 0.1;
         return t;
       }},
      {"bce_loss", [&](Var x) { return bce_loss(sigmoid(x), Tensor(Shape{3, 4}, 1.0)); },
       [&] { return random_tensor(s34, rng, -3, 3); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, op_gradient_error(c.op, c.input(), rng));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("second derivatives of smooth primitives") {
  std::mt19937_64 rng(99);
  const std::vector<Builder> ops = {
      [](Var x) { return sigmoid(x); },     [](Var x) { return ad::tanh(x); },
      [](Var x) { return reciprocal(x); },  [](Var x) { return ad::log(x); },
      [](Var x) { return mul(x, square(x)); },
  };
  for (const auto& op : ops) {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x0 = random_tensor(Shape{2, 3}, rng, 0.3, 2.0);
      const Tensor w = random_tensor(Shape{2, 3}, rng);
      const Tensor v = random_tensor(Shape{2, 3}, rng);
      auto grad_fn = [&](const Tensor& x) {
        Tape t;
        Var xv = t.leaf(x);
        return grad(sum(mul(op(xv), constant(t, w))), xv);
      };
      Tape t;
      Var x = t.leaf(x0);
      Tensor h = hvp(sum(mul(op(x), constant(t, w))), x, v);
      CHECK(relative_error(h, numeric_hvp(grad_fn, x0, v, 1e-4)) < 1e-6);
    }
  }
}

TEST_CASE("tape replay is bitwise deterministic") {
  std::mt19937_64 rng(5);
  Tape t;
  Var x = t.leaf(random_tensor(Shape{3, 4}, rng));
  Var w = t.leaf(random_tensor(Shape{4, 2}, rng));
  Var loss = bce_loss(sigmoid(sum_cols(relu(matmul(x, w)))), Tensor(Shape{3, 1}, 1.0));
  t.grad_graph(loss, std::vector<Var>{w});
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < t.size(); ++i) before.push_back(t.value(static_cast<NodeId>(i)));
  t.replay();
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(bitwise_equal(before[i], t.value(static_cast<NodeId>(i))));
}

TEST_CASE("sgd_step") {
  Parameter p{"w", Tensor::vector({1, 1}), true};
  Parameter* ps[] = {&p};
  const Tensor g[] = {Tensor::vector({2, 4})};
  sgd_step(ps, g, 0.5);
  CHECK(p.value[0] == 0.0);
  CHECK(p.value[1] == -1.0);

  const Tensor zero[] = {Tensor::vector({0, 0})};
  sgd_step(ps, zero, 0.3);
  CHECK(p.value[1] == -1.0);

  CHECK_THROWS_AS(sgd_step(ps, g, 0.0), ValidationError);
  CHECK_THROWS_AS(sgd_step(ps, g, -1.0), ValidationError);

  Parameter frozen{"theta/W0", Tensor::vector({1, 1}), false};
  Parameter* fs[] = {&frozen};
  try {
    sgd_step(fs, g, 0.1);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("theta/W0") != std::string::npos);
  }
  CHECK(frozen.value[0] == 1.0);
}

TEST_CASE("fault injection is detected by a gradient check") {
  std::mt19937_64 rng(1);
  const Tensor x0 = random_tensor(Shape{2, 2}, rng);
  const Builder op = [](Var x) { return sigmoid(x); };
  CHECK(op_gradient_error(op, x0, rng) < 1e-4);
  debug::inject_vjp_fault(OpKind::sigmoid);
  CHECK(op_gradient_error(op, x0, rng) > 1e-2);
  debug::inject_vjp_fault(std::nullopt);
}
