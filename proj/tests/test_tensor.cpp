#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "symlab/tensor.hpp"

using namespace symlab;
using namespace symlab::kernels;
using doctest::Approx;

TEST_CASE("tensor construction and indexing") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  t.at(1, 2) = -4.0;
  CHECK(t.at(1, 2) == -4.0);  // [TRIVIAL]
  CHECK(t.data[5] == -4.0);   // row-major layout

  Tensor id = Tensor::identity(3);
  CHECK(id.at(0, 0) == 1.0);
  CHECK(id.at(0, 1) == 0.0);

  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), TensorError);
}

TEST_CASE("check_finite rejects NaN and Inf") {
  Tensor t({1, 2}, 0.0);
  CHECK_NOTHROW(t.check_finite("ok"));
  t.data[1] = std::nan("");
  CHECK_THROWS_AS(t.check_finite("nan"), TensorError);
  t.data[1] = HUGE_VAL;
  CHECK_THROWS_AS(t.check_finite("inf"), TensorError);
}

TEST_CASE("matmul matches a hand-computed product") {
  // [DERIVED] 2x2 product computed by hand
  Tensor a({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b({2, 2}, {5.0, 6.0, 7.0, 8.0});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 19.0);
  CHECK(c.at(0, 1) == 22.0);
  CHECK(c.at(1, 0) == 43.0);
  CHECK(c.at(1, 1) == 50.0);
  CHECK_THROWS_AS(matmul(a, Tensor({3, 2})), TensorError);
}

TEST_CASE("parallel matmul agrees with the serial reference bitwise") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{7, 13, 5},
                         std::array<std::size_t, 3>{33, 64, 17}}) {
    Tensor a({m, k}), b({k, n});
    for (double& x : a.data) x = d(rng);
    for (double& x : b.data) x = d(rng);
    Tensor p = matmul(a, b), s = matmul_serial(a, b);
    REQUIRE(p.same_shape(s));
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.data[i] == s.data[i]);
  }
}

TEST_CASE("transposed matmul variants match explicit transposes") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor a({4, 6}), b({5, 6}), c({6, 4}), e({6, 5});
  for (Tensor* t : {&a, &b, &c, &e})
    for (double& x : t->data) x = d(rng);

  Tensor bt({6, 5});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t k = 0; k < 6; ++k) bt.at(k, r) = b.at(r, k);
  Tensor nt = matmul_nt(a, b), ref = matmul(a, bt);
  for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt.data[i] == Approx(ref.data[i]).epsilon(1e-12));

  Tensor ct({4, 6});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t k = 0; k < 4; ++k) ct.at(k, r) = c.at(r, k);
  Tensor tn = matmul_tn(c, e), ref2 = matmul(ct, e);
  for (std::size_t i = 0; i < tn.size(); ++i)
    CHECK(tn.data[i] == Approx(ref2.data[i]).epsilon(1e-12));
}

TEST_CASE("elementwise kernels") {
  Tensor a({1, 3}, {1.0, -2.0, 3.0});
  Tensor b({1, 3}, {0.5, 4.0, -1.0});
  CHECK(add(a, b).data == std::vector<double>{1.5, 2.0, 2.0});
  CHECK(sub(a, b).data == std::vector<double>{0.5, -6.0, 4.0});
  CHECK(mul(a, b).data == std::vector<double>{0.5, -8.0, -3.0});
  CHECK(scale(a, -2.0).data == std::vector<double>{-2.0, 4.0, -6.0});
  CHECK_THROWS_AS(add(a, Tensor({1, 2})), TensorError);

  Tensor x({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor bias({1, 2}, {10.0, 20.0});
  CHECK(add_bias(x, bias).data == std::vector<double>{11.0, 22.0, 13.0, 24.0});
}

TEST_CASE("softmax rows") {
  // [DERIVED] softmax of [1,2,3]
  Tensor x({1, 3}, {1.0, 2.0, 3.0});
  Tensor s = softmax_rows(x);
  CHECK(s.at(0, 0) == Approx(0.090030573170380462).epsilon(1e-14));
  CHECK(s.at(0, 1) == Approx(0.24472847105479764).epsilon(1e-14));
  CHECK(s.at(0, 2) == Approx(0.66524095577482178).epsilon(1e-14));

  // max-subtraction keeps huge logits finite
  Tensor big({1, 2}, {1e4, 1e4 - 1.0});
  Tensor sb = softmax_rows(big);
  CHECK(std::isfinite(sb.at(0, 0)));
  CHECK(sb.at(0, 0) + sb.at(0, 1) == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("causal softmax zeroes the upper triangle exactly") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 2.0);
  Tensor x({4, 4});
  for (double& v : x.data) v = d(rng);
  Tensor s = softmax_rows_causal(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      if (c > r) CHECK(s.at(r, c) == 0.0);
      sum += s.at(r, c);
    }
    CHECK(sum == Approx(1.0).epsilon(1e-14));
  }
  // first row attends only to itself
  CHECK(s.at(0, 0) == 1.0);
}

TEST_CASE("norms") {
  // [DERIVED] rms([3,4]) = sqrt(12.5)
  Tensor x({1, 2}, {3.0, 4.0});
  Tensor r = rmsnorm_rows(x);
  CHECK(r.at(0, 0) == Approx(0.84852813742385702).epsilon(1e-7));
  CHECK(r.at(0, 1) == Approx(1.131370849898476).epsilon(1e-7));

  // [DERIVED] layernorm of [1,2,3] (population std)
  Tensor y({1, 3}, {1.0, 2.0, 3.0});
  Tensor l = layernorm_rows(y);
  CHECK(l.at(0, 0) == Approx(-1.2247448713915889).epsilon(1e-7));
  CHECK(l.at(0, 1) == Approx(0.0).epsilon(1e-7));
  CHECK(l.at(0, 2) == Approx(1.2247448713915889).epsilon(1e-7));
}

TEST_CASE("gelu matches the tanh approximation") {
  // [DERIVED] closed-form tanh-approximation values
  Tensor x({1, 3}, {0.0, 1.0, -0.5});
  Tensor g = gelu(x);
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(0, 1) == Approx(0.84119199060827676).epsilon(1e-14));
  CHECK(g.at(0, 2) == Approx(-0.15428599017485606).epsilon(1e-14));

  // gelu_grad matches central finite differences
  const double eps = 1e-6;
  Tensor gg = gelu_grad(x);
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor hi = x, lo = x;
    hi.data[i] += eps;
    lo.data[i] -= eps;
    const double fd = (gelu(hi).data[i] - gelu(lo).data[i]) / (2.0 * eps);
    CHECK(gg.data[i] == Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("embedding lookup gathers rows") {
  Tensor table({3, 2}, {0.0, 1.0, 10.0, 11.0, 20.0, 21.0});
  Tensor e = embedding_lookup(table, {2, 0, 2});
  CHECK(e.data == std::vector<double>{20.0, 21.0, 0.0, 1.0, 20.0, 21.0});
  CHECK_THROWS_AS(embedding_lookup(table, {3}), TensorError);
  CHECK_THROWS_AS(embedding_lookup(table, {-1}), TensorError);
}

TEST_CASE("cross entropy of logits") {
  // [DERIVED] mean CE of [[0,0],[1,3]] against targets [0,1]
  Tensor logits({2, 2}, {0.0, 0.0, 1.0, 3.0});
  CHECK(cross_entropy_logits(logits, {0, 1}) == Approx(0.41003759580145899).epsilon(1e-14));
  // uniform logits give log(V)
  Tensor u({1, 4}, 7.0);
  CHECK(cross_entropy_logits(u, {2}) == Approx(std::log(4.0)).epsilon(1e-14));

  Tensor ls = log_softmax_rows(logits);
  CHECK(std::exp(ls.at(1, 1)) + std::exp(ls.at(1, 0)) == Approx(1.0).epsilon(1e-14));
}
