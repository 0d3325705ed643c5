#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <vector>

#include "xlat/rng.hpp"
#include "xlat/tensor.hpp"

using namespace xlat;
using namespace xlat::nd;

namespace {

std::vector<double> rand_vec(Rng& rng, size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// Independent 2-D matmul for cross-checking the tensor implementation.
std::vector<double> matmul_ref(const std::vector<double>& a,
                               const std::vector<double>& b, int m, int k,
                               int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

bool bits_equal(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("construction validates shape and finiteness") {
  CHECK_THROWS_AS(Tensor::constant({2, 2}, {1.0, 2.0, 3.0}), ShapeMismatch);
  CHECK_THROWS_AS(Tensor::constant({2}, {1.0, std::nan("")}), NonFiniteInput);
  CHECK_THROWS_AS(
      Tensor::constant({1}, {std::numeric_limits<double>::infinity()}),
      NonFiniteInput);
  Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_FALSE(t.on_tape());
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(t.item(), NotScalar);
}

TEST_CASE("operations never mutate operands") {
  Tensor a = Tensor::constant({3}, {1, 2, 3});
  Tensor b = Tensor::constant({3}, {4, 5, 6});
  Tensor c = add(a, b);
  CHECK(a.values() == std::vector<double>{1, 2, 3});
  CHECK(b.values() == std::vector<double>{4, 5, 6});
  CHECK(c.values() == std::vector<double>{5, 7, 9});
}

TEST_CASE("elementwise ops with suffix broadcasting") {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::constant({3}, {10, 20, 30});
  CHECK(add(a, row).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(sub(a, row).values() == std::vector<double>{-9, -18, -27, -6, -15, -24});
  CHECK(sub(row, a).values() == std::vector<double>{9, 18, 27, 6, 15, 24});
  CHECK(mul(a, Tensor::scalar(2.0)).values() ==
        std::vector<double>{2, 4, 6, 8, 10, 12});
  CHECK_THROWS_AS(add(a, Tensor::constant({2}, {1, 2})), ShapeMismatch);
}

TEST_CASE("broadcast gradients sum over leading axes") {
  Tape tape;
  Tensor a = Tensor::leaf({2, 2}, {1, 2, 3, 4}, tape);
  Tensor b = Tensor::leaf({2}, {5, 6}, tape);
  Tensor loss = sum(mul(a, b));
  GradMap g = tape.backward(loss);
  CHECK(g.at(a.node()) == std::vector<double>{5, 6, 5, 6});
  CHECK(g.at(b.node()) == std::vector<double>{1 + 3, 2 + 4});
}

TEST_CASE("matmul matches reference and its gradients check out") {
  Rng rng(11);
  auto av = rand_vec(rng, 4 * 3);
  auto bv = rand_vec(rng, 3 * 5);
  Tensor a = Tensor::constant({4, 3}, av);
  Tensor b = Tensor::constant({3, 5}, bv);
  Tensor c = matmul(a, b);
  auto ref = matmul_ref(av, bv, 4, 3, 5);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(c.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  CHECK_THROWS_AS(matmul(a, Tensor::constant({4, 2}, rand_vec(rng, 8))),
                  ShapeMismatch);

  auto w = rand_vec(rng, 4 * 5);
  double err = grad_check(
      [&](const Tensor& x) {
        return sum(mul(matmul(x, Tensor::constant({3, 5}, bv)),
                       Tensor::constant({4, 5}, w)));
      },
      {4, 3}, av, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("transpose flips a matrix and routes gradients") {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(transpose(a).values() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(transpose(a).shape() == Shape{3, 2});
  Rng rng(5);
  auto xv = rand_vec(rng, 6);
  auto wv = rand_vec(rng, 6);
  double err = grad_check(
      [&](const Tensor& x) {
        return sum(mul(transpose(x), Tensor::constant({3, 2}, wv)));
      },
      {2, 3}, xv, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("unary math ops") {
  Tensor x = Tensor::constant({3}, {-1.0, 0.0, 2.0});
  CHECK(exp(x).values()[2] == doctest::Approx(std::exp(2.0)));
  CHECK(tanh(x).values()[0] == doctest::Approx(std::tanh(-1.0)));
  CHECK(sigmoid(x).values()[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(log(x), DomainError);
  CHECK(log(Tensor::constant({2}, {1.0, std::exp(1.0)})).values()[1] ==
        doctest::Approx(1.0));
}

TEST_CASE("overflow raises instead of propagating infinities") {
  Tensor big = Tensor::constant({1}, {1000.0});
  CHECK_THROWS_AS(exp(big), DomainError);
  Tensor huge = Tensor::constant({1}, {1e308});
  CHECK_THROWS_AS(mul(huge, huge), DomainError);
}

TEST_CASE("log_softmax of [1, 2] matches the frozen oracle") {
  Tensor x = Tensor::constant({2}, {1.0, 2.0});
  Tensor y = log_softmax(x, 0);
  CHECK(y.values()[0] == doctest::Approx(-1.3132616875182228).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(-0.31326168751822286).epsilon(1e-12));
  Tensor s = softmax(x, 0);
  CHECK(s.values()[0] + s.values()[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one along the chosen axis") {
  Rng rng(3);
  Tensor x = Tensor::constant({3, 4}, rand_vec(rng, 12, 3.0));
  Tensor s = softmax(x, 1);
  for (int r = 0; r < 3; ++r) {
    double acc = 0.0;
    for (int c = 0; c < 4; ++c) acc += s.values()[r * 4 + c];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor s0 = softmax(x, 0);
  for (int c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (int r = 0; r < 3; ++r) acc += s0.values()[r * 4 + c];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("reductions over all elements and single axes") {
  Tensor x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(x).item() == 21.0);
  CHECK(mean(x).item() == 3.5);
  CHECK(sum(x, 0).values() == std::vector<double>{5, 7, 9});
  CHECK(sum(x, 1).values() == std::vector<double>{6, 15});
  CHECK(mean(x, 1).values() == std::vector<double>{2, 5});
  CHECK(sum(x, 0).shape() == Shape{3});
  Tape tape;
  Tensor leaf_x = Tensor::leaf({4}, {1, 2, 3, 4}, tape);
  Tensor loss = mean(leaf_x);
  GradMap g = tape.backward(loss);
  CHECK(g.at(leaf_x.node()) == std::vector<double>{0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("concat and slice are inverse block operations") {
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::constant({1, 2}, {5, 6});
  Tensor c = concat({a, b}, 0);
  CHECK(c.shape() == Shape{3, 2});
  CHECK(c.values() == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(slice(c, 0, 0, 2).values() == a.values());
  CHECK(slice(c, 0, 2, 1).values() == b.values());

  Tensor d = concat({a, Tensor::constant({2, 1}, {7, 8})}, 1);
  CHECK(d.values() == std::vector<double>{1, 2, 7, 3, 4, 8});
  CHECK(slice(d, 1, 2, 1).values() == std::vector<double>{7, 8});
  CHECK_THROWS_AS(slice(d, 1, 2, 2), ShapeMismatch);
  CHECK_THROWS_AS(concat({a, Tensor::constant({2}, {1, 2})}, 0), ShapeMismatch);

  Rng rng(7);
  auto xv = rand_vec(rng, 6);
  auto wv = rand_vec(rng, 8);
  double err = grad_check(
      [&](const Tensor& x) {
        Tensor mid = slice(x, 0, 1, 2);
        return sum(mul(concat({mid, mid}, 1), Tensor::constant({2, 4}, wv)));
      },
      {3, 2}, xv, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("reshape preserves data and gradients") {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reshape(a, {3, 2}).values() == a.values());
  CHECK(reshape(a, {6}).shape() == Shape{6});
  CHECK_THROWS_AS(reshape(a, {4}), ShapeMismatch);
}

TEST_CASE("embedding gathers rows and scatter-adds gradients") {
  Tape tape;
  Tensor table = Tensor::leaf({3, 2}, {1, 2, 3, 4, 5, 6}, tape);
  Tensor rows = embedding(table, {2, 0, 2});
  CHECK(rows.values() == std::vector<double>{5, 6, 1, 2, 5, 6});
  GradMap g = tape.backward(sum(rows));
  CHECK(g.at(table.node()) == std::vector<double>{1, 1, 0, 0, 2, 2});
  CHECK_THROWS_AS(embedding(table, {3}), DomainError);
}

TEST_CASE("masked_fill replaces values and blocks their gradients") {
  Tape tape;
  Tensor x = Tensor::leaf({4}, {1, 2, 3, 4}, tape);
  Tensor y = masked_fill(x, {0, 1, 0, 1}, -9.5);
  CHECK(y.values() == std::vector<double>{1, -9.5, 3, -9.5});
  GradMap g = tape.backward(sum(y));
  CHECK(g.at(x.node()) == std::vector<double>{1, 0, 1, 0});
  CHECK_THROWS_AS(masked_fill(x, {0, 1}, 0.0), ShapeMismatch);
}

TEST_CASE("layer_norm standardizes the last axis") {
  Rng rng(9);
  auto xv = rand_vec(rng, 2 * 5, 4.0);
  Tensor x = Tensor::constant({2, 5}, xv);
  Tensor g1 = Tensor::constant({5}, std::vector<double>(5, 1.0));
  Tensor b0 = Tensor::constant({5}, std::vector<double>(5, 0.0));
  Tensor y = layer_norm(x, g1, b0);
  for (int r = 0; r < 2; ++r) {
    double mu = 0.0, var = 0.0;
    for (int j = 0; j < 5; ++j) mu += y.values()[r * 5 + j];
    mu /= 5;
    for (int j = 0; j < 5; ++j) {
      double d = y.values()[r * 5 + j] - mu;
      var += d * d;
    }
    var /= 5;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto gv = rand_vec(rng, 5);
  auto bv = rand_vec(rng, 5);
  auto wv = rand_vec(rng, 10);
  double err = grad_check(
      [&](const Tensor& t) {
        return sum(mul(layer_norm(t, Tensor::constant({5}, gv),
                                  Tensor::constant({5}, bv)),
                       Tensor::constant({2, 5}, wv)));
      },
      {2, 5}, xv, 1e-5);
  CHECK(err < 1e-6);
  double err_gain = grad_check(
      [&](const Tensor& t) {
        return sum(mul(layer_norm(Tensor::constant({2, 5}, xv), t,
                                  Tensor::constant({5}, bv)),
                       Tensor::constant({2, 5}, wv)));
      },
      {5}, gv, 1e-5);
  CHECK(err_gain < 1e-6);
}

TEST_CASE("cross_entropy_rows equals composed log_softmax picking") {
  Rng rng(13);
  auto lv = rand_vec(rng, 3 * 4, 2.0);
  std::vector<int64_t> ids{1, 3, 0};
  Tensor logits = Tensor::constant({3, 4}, lv);
  Tensor ce = cross_entropy_rows(logits, ids);
  Tensor lp = log_softmax(logits, 1);
  double expect = 0.0;
  for (int r = 0; r < 3; ++r) expect -= lp.values()[r * 4 + ids[r]];
  expect /= 3.0;
  CHECK(ce.item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy_rows(logits, {1, 2}), ShapeMismatch);
  CHECK_THROWS_AS(cross_entropy_rows(logits, {1, 2, 4}), DomainError);

  double err = grad_check(
      [&](const Tensor& x) { return cross_entropy_rows(x, ids); }, {3, 4}, lv,
      1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("clamp limits values with zero gradient outside the window") {
  Tape tape;
  Tensor x = Tensor::leaf({3}, {-5.0, 0.5, 7.0}, tape);
  Tensor y = clamp(x, -1.0, 1.0);
  CHECK(y.values() == std::vector<double>{-1.0, 0.5, 1.0});
  GradMap g = tape.backward(sum(y));
  CHECK(g.at(x.node()) == std::vector<double>{0, 1, 0});
  CHECK_THROWS_AS(clamp(x, 2.0, 1.0), DomainError);
}

TEST_CASE("detach blocks gradient flow") {
  Tape tape;
  Tensor x = Tensor::leaf({2}, {3, 4}, tape);
  Tensor y = mul(detach(mul(x, x)), x);
  GradMap g = tape.backward(sum(y));
  // d/dx of stop_grad(x^2) * x is x^2 only.
  CHECK(g.at(x.node()) == std::vector<double>{9, 16});
}

TEST_CASE("backward walks the chain rule through composite graphs") {
  Tape tape;
  Tensor x = Tensor::leaf({3}, {1, 2, 3}, tape);
  Tensor loss = mean(mul(x, x));
  GradMap g = tape.backward(loss);
  const auto& gx = g.at(x.node());
  for (int i = 0; i < 3; ++i)
    CHECK(gx[i] == doctest::Approx(2.0 * (i + 1) / 3.0).epsilon(1e-15));
}

TEST_CASE("backward on a non-scalar or reused tape raises") {
  Tape tape;
  Tensor x = Tensor::leaf({2}, {1, 2}, tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), NotScalar);
  Tensor loss = sum(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), TapeConsumed);
}

TEST_CASE("gradients of unreachable leaves come back as zeros") {
  Tape tape;
  Tensor x = Tensor::leaf({2}, {1, 2}, tape);
  Tensor unused = Tensor::leaf({3}, {1, 2, 3}, tape);
  GradMap g = tape.backward(sum(x));
  CHECK(g.at(unused.node()) == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward is linear over loss heads, bit for bit") {
  // Linearity is exact in float64 only under the same evaluation order: heads
  // are selected by weights on an otherwise identical graph, and each head
  // deposits one gradient contribution into the leaf, so the combined pass
  // differs from the per-head sum only by IEEE-exact commutativity.
  auto run = [](double w1, double w2) {
    Tape tape;
    Tensor x = Tensor::leaf({3}, {0.3, -1.2, 2.5}, tape);
    Tensor l1 = sum(mul(x, Tensor::constant({3}, {1.5, -0.5, 2.0})));
    Tensor l2 = mean(exp(mul(x, Tensor::scalar(0.25))));
    Tensor loss = add(mul(l1, Tensor::scalar(w1)), mul(l2, Tensor::scalar(w2)));
    GradMap g = tape.backward(loss);
    return g.at(x.node());
  };
  auto g1 = run(1, 0), g2 = run(0, 1), gsum = run(1, 1);
  for (int i = 0; i < 3; ++i) CHECK(bits_equal(gsum[i], g1[i] + g2[i]));
}

TEST_CASE("tape entries stay topologically ordered") {
  Tape tape;
  Tensor x = Tensor::leaf({2}, {1, 2}, tape);
  Tensor y = mul(add(x, Tensor::scalar(1.0)), x);
  Tensor loss = sum(y);
  for (int node = 0; node <= loss.node(); ++node)
    for (int in : tape.inputs_at(node)) CHECK(in < node);
}

TEST_CASE("identical operands produce bit-identical results") {
  Rng rng(21);
  auto xv = rand_vec(rng, 16, 2.0);
  Tensor x = Tensor::constant({4, 4}, xv);
  Tensor y1 = softmax(matmul(x, x), 1);
  Tensor y2 = softmax(matmul(x, x), 1);
  for (int i = 0; i < 16; ++i) CHECK(bits_equal(y1.values()[i], y2.values()[i]));
}

TEST_CASE("grad_check validates epsilon and detects nondeterminism") {
  CHECK_THROWS_AS(
      grad_check([](const Tensor& x) { return sum(x); }, {1}, {1.0}, 1e-8),
      ConfigError);
  CHECK_THROWS_AS(
      grad_check([](const Tensor& x) { return sum(x); }, {1}, {1.0}, 1e-2),
      ConfigError);
  int calls = 0;
  CHECK_THROWS_AS(grad_check(
                      [&calls](const Tensor& x) {
                        ++calls;
                        return mul(sum(x), Tensor::scalar(1.0 + 1e-9 * calls));
                      },
                      {2}, {1.0, 2.0}, 1e-5),
                  NonDeterministicFunction);
}

TEST_CASE("grad_check passes for every catalog op at random points") {
  Rng rng(99);
  auto w23 = rand_vec(rng, 6);
  auto w32 = rand_vec(rng, 6);
  auto x23 = rand_vec(rng, 6);
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    Shape shape;
    std::vector<double> x0;
  };
  std::vector<Case> cases;
  Tensor w = Tensor::constant({2, 3}, w23);
  cases.push_back({"add", [=](const Tensor& x) { return sum(mul(add(x, w), w)); }, {2, 3}, x23});
  cases.push_back({"sub", [=](const Tensor& x) { return sum(mul(sub(w, x), w)); }, {2, 3}, x23});
  cases.push_back({"mul", [=](const Tensor& x) { return sum(mul(mul(x, x), w)); }, {2, 3}, x23});
  cases.push_back({"matmul",
                   [=](const Tensor& x) {
                     return sum(matmul(x, Tensor::constant({3, 2}, w32)));
                   },
                   {2, 3}, x23});
  cases.push_back({"exp", [=](const Tensor& x) { return sum(mul(exp(x), w)); }, {2, 3}, x23});
  cases.push_back({"log",
                   [=](const Tensor& x) { return sum(mul(log(x), w)); },
                   {2, 3},
                   {0.5, 1.5, 2.0, 0.7, 3.0, 1.1}});
  cases.push_back({"tanh", [=](const Tensor& x) { return sum(mul(tanh(x), w)); }, {2, 3}, x23});
  cases.push_back({"sigmoid", [=](const Tensor& x) { return sum(mul(sigmoid(x), w)); }, {2, 3}, x23});
  cases.push_back({"softmax", [=](const Tensor& x) { return sum(mul(softmax(x, 1), w)); }, {2, 3}, x23});
  cases.push_back({"log_softmax", [=](const Tensor& x) { return sum(mul(log_softmax(x, 0), w)); }, {2, 3}, x23});
  cases.push_back({"sum_axis", [=](const Tensor& x) { return sum(mul(sum(x, 0), Tensor::constant({3}, {1, -2, 3}))); }, {2, 3}, x23});
  cases.push_back({"mean_axis", [=](const Tensor& x) { return sum(mul(mean(x, 1), Tensor::constant({2}, {1, -1}))); }, {2, 3}, x23});
  auto w43 = rand_vec(rng, 12);
  cases.push_back({"concat",
                   [=](const Tensor& x) {
                     return sum(mul(concat({x, x}, 0),
                                    Tensor::constant({4, 3}, w43)));
                   },
                   {2, 3}, x23});
  cases.push_back({"slice", [=](const Tensor& x) { return sum(mul(slice(x, 1, 1, 2), Tensor::constant({2, 2}, {1, 2, 3, 4}))); }, {2, 3}, x23});
  cases.push_back({"reshape", [=](const Tensor& x) { return sum(mul(reshape(x, {3, 2}), Tensor::constant({3, 2}, w32))); }, {2, 3}, x23});
  cases.push_back({"masked_fill", [=](const Tensor& x) { return sum(mul(masked_fill(x, {0, 1, 0, 0, 1, 0}, 2.0), w)); }, {2, 3}, x23});
  auto w42 = rand_vec(rng, 8);
  cases.push_back({"embedding",
                   [=](const Tensor& x) {
                     return sum(mul(embedding(x, {2, 0, 1, 2}),
                                    Tensor::constant({4, 2}, w42)));
                   },
                   {3, 2}, rand_vec(rng, 6)});
  cases.push_back({"clamp", [=](const Tensor& x) { return sum(mul(clamp(x, -10.0, 10.0), w)); }, {2, 3}, x23});
  cases.push_back({"transpose", [=](const Tensor& x) { return sum(mul(transpose(x), Tensor::constant({3, 2}, w32))); }, {2, 3}, x23});

  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(grad_check(c.f, c.shape, c.x0, 1e-5) < 1e-6);
  }
}
