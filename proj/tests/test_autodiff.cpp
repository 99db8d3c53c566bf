#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "symlab/autodiff.hpp"

using namespace symlab;
using doctest::Approx;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sigma);
  Tensor t(std::move(shape));
  for (double& x : t.data) x = d(rng);
  return t;
}

}  // namespace

TEST_CASE("forward values route through the shared kernels") {
  Tensor a = random_tensor({3, 4}, 1), b = random_tensor({4, 2}, 2);
  ad::Var va = ad::leaf(a), vb = ad::leaf(b);
  Tensor ref = kernels::matmul(a, b);
  Tensor got = ad::matmul(va, vb)->value;
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got.data[i] == ref.data[i]);

  Tensor sm = ad::softmax_rows_causal(ad::leaf(random_tensor({3, 3}, 3)))->value;
  CHECK(sm.at(0, 1) == 0.0);
  CHECK(sm.at(0, 2) == 0.0);
}

TEST_CASE("every op passes finite-difference checks over many seeds") {
  // [DERIVED] oracle: central finite differences via ad::grad_check
  const double tol = 1e-4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = random_tensor({3, 4}, 100 + seed);
    Tensor w = random_tensor({4, 3}, 200 + seed);
    Tensor same = random_tensor({3, 4}, 300 + seed);

    auto end = [](const ad::Var& v) { return ad::sum_squares(v); };
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::matmul(v, ad::constant(w))); },
                         x) < tol);
    CHECK(ad::grad_check(
              [&](const ad::Var& v) { return end(ad::matmul_nt(v, ad::constant(same))); },
              random_tensor({2, 4}, 400 + seed)) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::add(v, ad::constant(same))); },
                         x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::sub(ad::constant(same), v)); },
                         x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::mul(v, ad::constant(same))); },
                         x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::scale(v, -2.5)); }, x) < tol);
    CHECK(ad::grad_check(
              [&](const ad::Var& v) {
                return end(ad::add_bias(ad::constant(same), v));
              },
              random_tensor({1, 4}, 500 + seed)) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::softmax_rows(v)); }, x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::softmax_rows_causal(v)); },
                         random_tensor({4, 4}, 600 + seed)) < tol);
    // project the normalized rows onto a random constant first:
    // sum_squares of a normalized row alone is (near-)constant, so its
    // true gradient is ~0 and the check would be vacuous
    CHECK(ad::grad_check(
              [&](const ad::Var& v) {
                return end(ad::mul(ad::rmsnorm_rows(v), ad::constant(same)));
              },
              x) < tol);
    CHECK(ad::grad_check(
              [&](const ad::Var& v) {
                return end(ad::mul(ad::layernorm_rows(v), ad::constant(same)));
              },
              x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::gelu(v)); }, x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::embedding(v, {1, 0, 1})); },
                         random_tensor({3, 4}, 700 + seed)) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::slice_cols(v, 1, 2)); }, x) < tol);
    CHECK(ad::grad_check(
              [&](const ad::Var& v) {
                return end(ad::concat_cols({v, ad::constant(same)}));
              },
              x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::select_rows(v, {2, 0})); }, x) <
          tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return end(ad::rotary(v, {0, 1, 2})); }, x) < tol);
    CHECK(ad::grad_check([&](const ad::Var& v) { return ad::cross_entropy(v, {1, 3, 0}); },
                         random_tensor({3, 4}, 800 + seed)) < tol);
  }
}

TEST_CASE("gradients accumulate when a var is used twice") {
  // d/dx sum((x + x)^2) = 8x
  Tensor x({1, 3}, {1.0, -2.0, 0.5});
  ad::Var v = ad::leaf(x);
  ad::Var root = ad::sum_squares(ad::add(v, v));
  ad::backward(root);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(v->grad.data[i] == Approx(8.0 * x.data[i]).epsilon(1e-12));
}

TEST_CASE("constants receive no gradient") {
  ad::Var c = ad::constant(Tensor({1, 2}, {1.0, 2.0}));
  ad::Var v = ad::leaf(Tensor({1, 2}, {3.0, 4.0}));
  ad::backward(ad::sum_squares(ad::mul(c, v)));
  CHECK_FALSE(c->requires_grad);
  CHECK(v->grad.data[0] == Approx(2.0 * 3.0 * 1.0 * 1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits is log V") {
  Tensor u({2, 5}, 3.25);
  ad::Var loss = ad::cross_entropy(ad::leaf(u), {0, 4});
  CHECK(loss->value.at(0, 0) == Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("rotary code preserves row norms") {
  Tensor x = random_tensor({4, 8}, 42);
  Tensor r = ad::rotary_forward(x, {0, 3, 5, 9}, 10000.0);
  for (std::size_t row = 0; row < 4; ++row) {
    double nx = 0.0, nr = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
      nx += x.at(row, c) * x.at(row, c);
      nr += r.at(row, c) * r.at(row, c);
    }
    CHECK(nr == Approx(nx).epsilon(1e-12));
  }
  // position 0 is the identity rotation
  for (std::size_t c = 0; c < 8; ++c) CHECK(r.at(0, c) == Approx(x.at(0, c)).epsilon(1e-12));
}

TEST_CASE("zero_grad resets accumulation between steps") {
  ad::Var v = ad::leaf(Tensor({1, 2}, {1.0, 2.0}));
  ad::backward(ad::sum_squares(v));
  const double g0 = v->grad.data[0];
  v->zero_grad();
  CHECK(v->grad.data[0] == 0.0);
  ad::backward(ad::sum_squares(v));
  CHECK(v->grad.data[0] == Approx(g0).epsilon(1e-15));
}
