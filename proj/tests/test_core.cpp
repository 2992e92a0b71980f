#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "disent/gradcheck.hpp"
#include "disent/graph.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

using namespace disent;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.at(i, j) = rng.uniform(lo, hi);
  return t;
}

// gradcheck a single-tensor-input scalar expression
void check_grad(const std::function<Var(const Var&)>& expr, const Tensor& x,
                double tol = 1e-6) {
  Var vx = Var::param(x);
  Var loss = expr(vx);
  backward(loss);
  Tensor analytic = vx.grad();
  Tensor numeric = finite_diff_grad(
      [&](const Tensor& t) { return expr(Var::param(t)).value().item(); }, x);
  CHECK(max_rel_error(analytic, numeric) < tol);
}

}  // namespace

TEST_CASE("tensor shape and error reporting") {
  Tensor a = Tensor::zeros(2, 3);
  CHECK(a.shape_str() == "[2x3]");
  CHECK(a.numel() == 6);
  CHECK_THROWS_AS(a.item(), ShapeError);
  Tensor b = Tensor::zeros(3, 2);
  CHECK_THROWS_WITH_AS(require_same_shape("add", a, b),
                       "add: shape mismatch [2x3] vs [3x2]", ShapeError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  Tensor c = Tensor::of(2, 2, {1, 2, 3, 4});
  CHECK(c.at(1, 0) == 3.0);
  CHECK(c.all_finite());
  c.at(0, 1) = std::nan("");
  CHECK_FALSE(c.all_finite());
}

TEST_CASE("tensor bit equality") {
  Tensor a = Tensor::of(1, 3, {0.1, 0.2, 0.3});
  Tensor b = a;
  CHECK(a.bit_equal(b));
  b.at(0, 2) = 0.3 + 1e-17;  // rounds to same double
  CHECK(a.bit_equal(b));
  b.at(0, 2) = 0.300000001;
  CHECK_FALSE(a.bit_equal(b));
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(42, "init");
  Rng b(42, "init");
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, "batch");
  Rng d(42, "init");
  bool all_same = true;
  for (int i = 0; i < 16; ++i) all_same = all_same && c.next_u64() == d.next_u64();
  CHECK_FALSE(all_same);

  Rng e(43, "init");
  Rng f(42, "init");
  CHECK(e.next_u64() != f.next_u64());

  // children are reproducible and distinct from each other
  Rng p(7, "pairs");
  CHECK(p.child(3).next_u64() == Rng(7, "pairs").child(3).next_u64());
  CHECK(p.child(3).next_u64() != p.child(4).next_u64());
  CHECK(p.child("glyph").next_u64() == Rng(7, "pairs").child("glyph").next_u64());
  CHECK(p.child("glyph").next_u64() != p.child("texture").next_u64());
}

TEST_CASE("rng distributions stay in range") {
  Rng rng(1, "dist");
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    std::uint64_t k = rng.uniform_below(13);
    CHECK(k < 13);
    CHECK(std::isfinite(rng.normal()));
  }
  double lo = rng.uniform(-2.0, 5.0);
  CHECK(lo >= -2.0);
  CHECK(lo < 5.0);
}

TEST_CASE("finite_diff_grad on closed forms") {
  auto square = [](const Tensor& t) { return t.item() * t.item(); };
  Tensor x = Tensor::scalar(3.0);
  Tensor g = finite_diff_grad(square, x);
  CHECK(std::abs(g.item() - 6.0) <= 1e-8);

  auto total = [](const Tensor& t) { return t.map().sum(); };
  Tensor y = Tensor::of(2, 3, {1, -2, 3, 4, -5, 6});
  Tensor gy = finite_diff_grad(total, y);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(gy.at(i, j) == doctest::Approx(1.0));

  auto bad = [](const Tensor& t) { return std::log(t.item()); };
  CHECK_THROWS_AS(finite_diff_grad(bad, Tensor::scalar(0.0)), DomainError);
}

TEST_CASE("backward basics") {
  Tensor x0 = Tensor::of(2, 2, {1, 2, 3, 4});

  SUBCASE("sum gives all-ones") {
    Var x = Var::param(x0);
    backward(sum(x));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(x.grad().at(i, j) == 1.0);
  }

  SUBCASE("non-scalar loss rejected") {
    Var x = Var::param(x0);
    CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
  }

  SUBCASE("additivity: grad(a*L1 + b*L2) = a*grad(L1) + b*grad(L2)") {
    auto l1 = [](const Var& v) { return sum(mul(v, v)); };
    auto l2 = [](const Var& v) { return sum(exp(mul_scalar(v, 0.3))); };
    const double a = 0.7, b = -1.3;

    Var xa = Var::param(x0);
    backward(l1(xa));
    Tensor g1 = xa.grad();
    Var xb = Var::param(x0);
    backward(l2(xb));
    Tensor g2 = xb.grad();

    Var xc = Var::param(x0);
    backward(add(mul_scalar(l1(xc), a), mul_scalar(l2(xc), b)));
    Tensor gc = xc.grad();
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(std::abs(gc.at(i, j) - (a * g1.at(i, j) + b * g2.at(i, j))) <=
              1e-12);
  }

  SUBCASE("repeated backward gives identical gradients") {
    Var x = Var::param(x0);
    Var loss = sum(mul(x, exp(x)));
    backward(loss);
    Tensor first = x.grad();
    backward(loss);
    CHECK(first.bit_equal(x.grad()));
  }

  SUBCASE("grad of unreached node is zeros") {
    Var x = Var::param(x0);
    Var y = Var::param(x0);
    backward(sum(x));
    CHECK(y.grad().bit_equal(Tensor::zeros(2, 2)));
  }

  SUBCASE("diamond reuse accumulates") {
    Var x = Var::param(Tensor::scalar(2.0));
    Var y = mul(x, x);  // same node used twice
    backward(sum(y));
    CHECK(x.grad().item() == doctest::Approx(4.0));
  }
}

TEST_CASE("stated conventions") {
  SUBCASE("abs backward at 0 picks subgradient 0") {
    Var x = Var::param(Tensor::of(1, 3, {-2.0, 0.0, 5.0}));
    backward(sum(abs(x)));
    CHECK(x.grad().at(0, 0) == -1.0);
    CHECK(x.grad().at(0, 1) == 0.0);
    CHECK(x.grad().at(0, 2) == 1.0);
  }

  SUBCASE("relu backward at 0 is 0") {
    Var x = Var::param(Tensor::of(1, 3, {-1.0, 0.0, 2.0}));
    backward(sum(relu(x)));
    CHECK(x.grad().at(0, 0) == 0.0);
    CHECK(x.grad().at(0, 1) == 0.0);
    CHECK(x.grad().at(0, 2) == 1.0);
  }

  SUBCASE("row l2 normalize of a 3-4-5 triangle") {
    Var x = Var::constant(Tensor::of(1, 2, {3.0, 4.0}));
    Tensor out = row_l2_normalize(x).value();
    CHECK(out.at(0, 0) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(out.at(0, 1) == doctest::Approx(0.8).epsilon(1e-9));
  }

  SUBCASE("normalize survives an all-zero row") {
    Var x = Var::param(Tensor::zeros(2, 3));
    Var out = row_l2_normalize(x);
    CHECK(out.value().all_finite());
    backward(sum(out));
    CHECK(x.grad().all_finite());
  }
}

TEST_CASE("matmul adjoint vs finite differences on random 3x4 * 4x2") {
  Rng rng(2024, "gradcheck");
  Tensor a0 = random_tensor(rng, 3, 4);
  Tensor b0 = random_tensor(rng, 4, 2);

  Var a = Var::param(a0);
  Var b = Var::param(b0);
  backward(sum(matmul(a, b)));

  Tensor na = finite_diff_grad(
      [&](const Tensor& t) {
        return sum(matmul(Var::param(t), Var::constant(b0))).value().item();
      },
      a0);
  Tensor nb = finite_diff_grad(
      [&](const Tensor& t) {
        return sum(matmul(Var::constant(a0), Var::param(t))).value().item();
      },
      b0);
  CHECK(max_rel_error(a.grad(), na) < 1e-6);
  CHECK(max_rel_error(b.grad(), nb) < 1e-6);
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(9, "prims");
  Tensor x = random_tensor(rng, 3, 4, 0.2, 1.5);  // positive, away from kinks

  check_grad([](const Var& v) { return sum(mul(v, v)); }, x);
  check_grad([](const Var& v) { return sum(exp(v)); }, x);
  check_grad([](const Var& v) { return sum(log(v)); }, x);
  check_grad([](const Var& v) { return sum(sqrt(v)); }, x);
  check_grad([](const Var& v) { return sum(abs(v)); }, x);
  check_grad([](const Var& v) { return sum(relu(v)); }, x);
  check_grad([](const Var& v) { return sum(transpose(v)); }, x);
  check_grad([](const Var& v) { return sum(mul_scalar(add_scalar(v, 2.0), -0.5)); }, x);
  check_grad([](const Var& v) { return sum(neg(sub(v, mul_scalar(v, 3.0)))); }, x);
  check_grad([](const Var& v) { return sum(mul(row_sum(v), row_sum(v))); }, x);
  check_grad([](const Var& v) { return sum(mul(col_sum(v), col_sum(v))); }, x);
  check_grad([](const Var& v) { return sum(mul(row_l2_norm(v), row_l2_norm(v))); }, x);
  check_grad([](const Var& v) { return sum(exp(row_l2_normalize(v))); }, x);
  check_grad([](const Var& v) { return sum(exp(slice_cols(v, 1, 3))); }, x);
  check_grad([](const Var& v) {
    return sum(exp(concat_cols({slice_cols(v, 0, 2), slice_cols(v, 2, 4)})));
  }, x);
  check_grad([](const Var& v) {
    return sum(mul(concat_rows({v, v}), concat_rows({v, mul_scalar(v, 2.0)})));
  }, x);
  check_grad([](const Var& v) { return sum(exp(gather_rows(v, {2, 0, 0, 1}))); }, x);
  check_grad([](const Var& v) { return sum(exp(permute_cols(v, {3, 1, 0, 2}))); }, x);
  check_grad([](const Var& v) { return sum(segment_mean_rows(mul(v, v), 3)); }, x);

  Tensor u = random_tensor(rng, 3, 1, 0.5, 2.0);
  check_grad([&](const Var& v) { return sum(mul_colvec(v, Var::constant(u))); }, x);
  check_grad([&](const Var& v) { return sum(div_colvec(v, Var::constant(u))); }, x);
  check_grad([&](const Var& v) { return sum(exp(div_colvec(Var::constant(x), v))); }, u);
  Tensor rv = random_tensor(rng, 1, 4);
  check_grad([&](const Var& v) { return sum(mul(add_rowvec(v, Var::constant(rv)), v)); }, x);
  check_grad([&](const Var& v) { return sum(mul(add_colvec(v, Var::constant(u)), v)); }, x);
  check_grad([&](const Var& v) { return sum(exp(add_rowvec(Var::constant(x), v))); }, rv);
}

TEST_CASE("stabilized log-sum-exp keeps exact gradients") {
  Rng rng(5, "lse");
  Tensor x = random_tensor(rng, 4, 6, -3.0, 3.0);
  auto lse_shifted = [](const Var& v) {
    Var m = row_max_detached(v);
    Var shifted = sub(v, matmul(m, Var::constant(Tensor::full(1, 6, 1.0))));
    return sum(add(log(row_sum(exp(shifted))), m));
  };
  auto lse_plain = [](const Var& v) { return sum(log(row_sum(exp(v)))); };

  Var a = Var::param(x);
  backward(lse_shifted(a));
  Var b = Var::param(x);
  backward(lse_plain(b));
  CHECK(max_rel_error(a.grad(), b.grad(), 1e-12) < 1e-12);
  CHECK(std::abs(lse_shifted(Var::constant(x)).value().item() -
                 lse_plain(Var::constant(x)).value().item()) < 1e-12);
  check_grad(lse_shifted, x);
}

TEST_CASE("conv plumbing gradients") {
  Rng rng(11, "conv");
  ConvGeom g{2, 2, 5, 5, 3, 2, 1};
  CHECK(g.out_h() == 3);
  CHECK(g.out_w() == 3);
  Tensor img = random_tensor(rng, 2, 2 * 5 * 5);
  Tensor w = random_tensor(rng, 2 * 3 * 3, 4);

  check_grad([&](const Var& v) {
    Var patches = im2col(v, g);
    Var convolved = matmul(patches, Var::constant(w));
    return sum(exp(conv_rows_to_chw(convolved, 2, 3, 3, 4)));
  }, img);
  check_grad([&](const Var& v) {
    Var patches = im2col(Var::constant(img), g);
    return sum(exp(matmul(patches, v)));
  }, w);
}

TEST_CASE("im2col layout places padded patches correctly") {
  // single 1-channel 2x2 image, kernel 3, stride 1, pad 1 -> 4 patches of 9
  ConvGeom g{1, 1, 2, 2, 3, 1, 1};
  Tensor img = Tensor::of(1, 4, {1, 2, 3, 4});
  Tensor p = im2col(Var::constant(img), g).value();
  CHECK(p.rows() == 4);
  CHECK(p.cols() == 9);
  // top-left output: image occupies bottom-right 2x2 of the 3x3 patch
  std::vector<double> expect0 = {0, 0, 0, 0, 1, 2, 0, 3, 4};
  for (std::size_t j = 0; j < 9; ++j) CHECK(p.at(0, j) == expect0[j]);
  // bottom-right output: image occupies top-left 2x2
  std::vector<double> expect3 = {1, 2, 0, 3, 4, 0, 0, 0, 0};
  for (std::size_t j = 0; j < 9; ++j) CHECK(p.at(3, j) == expect3[j]);
}

TEST_CASE("segment mean averages row blocks") {
  Tensor x = Tensor::of(4, 2, {1, 2, 3, 4, 10, 20, 30, 40});
  Tensor m = segment_mean_rows(Var::constant(x), 2).value();
  CHECK(m.rows() == 2);
  CHECK(m.at(0, 0) == 2.0);
  CHECK(m.at(0, 1) == 3.0);
  CHECK(m.at(1, 0) == 20.0);
  CHECK(m.at(1, 1) == 30.0);
}

TEST_CASE("shape and domain errors name the offender") {
  Var a = Var::constant(Tensor::zeros(2, 3));
  Var b = Var::constant(Tensor::zeros(2, 2));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       "matmul: shape mismatch [2x3] vs [2x2]", ShapeError);
  CHECK_THROWS_WITH_AS(add(a, b), "add: shape mismatch [2x3] vs [2x2]",
                       ShapeError);
  CHECK_THROWS_WITH_AS(log(Var::constant(Tensor::of(1, 2, {1.0, 0.0}))),
                       "log: non-positive input at (0,1)", DomainError);
  CHECK_THROWS_AS(sqrt(Var::constant(Tensor::of(1, 1, {-2.0}))), DomainError);
  CHECK_THROWS_WITH_AS(
      div_colvec(a, Var::constant(Tensor::of(2, 1, {1.0, 0.0}))),
      "div_colvec: zero divisor at row 1", DomainError);
  CHECK_THROWS_AS(slice_cols(a, 2, 5), ShapeError);
  CHECK_THROWS_AS(gather_rows(a, {0, 3}), ShapeError);
  CHECK_THROWS_AS(permute_cols(a, {0, 0, 1}), DomainError);
  CHECK_THROWS_AS(segment_mean_rows(a, 3), ShapeError);
}
