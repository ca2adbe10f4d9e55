#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "pbact/errors.hpp"
#include "pbact/gradcheck.hpp"
#include "pbact/numerics.hpp"
#include "pbact/rng.hpp"
#include "pbact/tensor.hpp"

using namespace pbact;

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-4;

Tensor random_param(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::rand_uniform(s, rng, lo, hi, true);
}

// Random values bounded away from zero, for ops with kinks at the origin.
Tensor random_param_no_kink(const Shape& s, Rng& rng) {
  std::vector<double> vals(shape_numel(s));
  for (auto& v : vals) {
    const double mag = rng.uniform(0.2, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from(s, std::move(vals), true);
}

// Weights the output so every entry's gradient is distinct and nonzero.
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  Tensor w = Tensor::rand_uniform(t.shape(), rng, 0.5, 1.5);
  return sum(hadamard(t, w));
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});

  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::from({2}, {1.0, std::nan("")}, false), NumericError);
  CHECK_THROWS_AS(Tensor::from({2}, {1.0, INFINITY}, false), NumericError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), DimensionError);

  Tensor s = Tensor::scalar(4.5);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 4.5);
  CHECK_THROWS_AS(t.item(), UsageError);
}

TEST_CASE("matmul examples") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {3, -1, 2, 7});
  Tensor prod = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(prod.value_at(i) == m.value_at(i));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.value_at(0) == 2.0);
  CHECK(c.value_at(1) == 4.0);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("softmax_rows examples and stability") {
  Tensor flat = softmax_rows(Tensor::from({1, 2}, {0, 0}));
  CHECK(flat.value_at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(flat.value_at(1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor big = softmax_rows(Tensor::from({1, 2}, {1000, 1000}));
  CHECK(std::isfinite(big.value_at(0)));
  CHECK(big.value_at(0) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor skew = softmax_rows(Tensor::from({1, 2}, {0.0, std::log(3.0)}));
  CHECK(skew.value_at(0) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(skew.value_at(1) == doctest::Approx(0.75).epsilon(1e-9));

  // Rows sum to 1 +- 1e-6 for magnitude-1000 logits.
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::rand_uniform({4, 6}, rng, -1000.0, 1000.0);
    Tensor y = softmax_rows(x);
    for (int i = 0; i < 4; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < 6; ++j) {
        const double v = y.value_at(i * 6 + j);
        CHECK(v >= 0.0);
        row_sum += v;
      }
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("elementwise examples") {
  Rng rng(3);
  Tensor x = Tensor::rand_uniform({3, 3}, rng, -2, 2);
  Tensor same = scale(x, 1.0);
  for (int i = 0; i < 9; ++i) CHECK(same.value_at(i) == x.value_at(i));

  Tensor lg = log(softmax_rows(Tensor::from({1, 2}, {0, 0})));
  CHECK(lg.value_at(0) == doctest::Approx(std::log(0.5)).epsilon(1e-9));
  CHECK(lg.value_at(1) == doctest::Approx(std::log(0.5)).epsilon(1e-9));

  CHECK(mean(Tensor::from({3}, {1, 2, 3})).item() == doctest::Approx(2.0));

  // The epsilon floor absorbs tiny negatives; genuine negatives are rejected.
  CHECK(log(Tensor::from({1}, {0.0})).value_at(0) ==
        doctest::Approx(std::log(1e-8)));
  CHECK_THROWS_AS(log(Tensor::from({1}, {-0.5})), NumericError);
}

TEST_CASE("backward semantics") {
  SUBCASE("sum gradient is ones") {
    Tensor x = Tensor::rand_uniform({2, 2}, *std::make_unique<Rng>(1), -1, 1, true);
    Tensor root = sum(x);
    backward(root);
    for (double g : x.grad()) CHECK(g == 1.0);
  }

  SUBCASE("constant root: no grads, no error") {
    Tensor c = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor root = sum(c);
    CHECK_NOTHROW(backward(root));
    CHECK(!c.has_grad());
  }

  SUBCASE("non-scalar root rejected") {
    Tensor x = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), UsageError);
  }

  SUBCASE("repeated backward without rebuild rejected") {
    Tensor x = Tensor::zeros({2}, true);
    Tensor root = sum(x);
    backward(root);
    CHECK_THROWS_AS(backward(root), UsageError);
  }

  SUBCASE("shared subexpression accumulates like a duplicated subgraph") {
    Rng rng(11);
    std::vector<double> vals(4);
    for (auto& v : vals) v = rng.uniform(-1, 1);

    Tensor x1 = Tensor::from({4}, vals, true);
    Tensor h = hadamard(x1, x1);
    backward(sum(add(h, h)));  // h shared twice

    Tensor x2 = Tensor::from({4}, vals, true);
    backward(sum(add(hadamard(x2, x2), hadamard(x2, x2))));  // duplicated

    for (int i = 0; i < 4; ++i)
      CHECK(x1.grad()[i] == doctest::Approx(x2.grad()[i]).epsilon(1e-15));
  }
}

TEST_CASE("graph traversal visits each node once, parents first") {
  Rng rng(5);
  Tensor x = random_param({3, 3}, rng);
  Tensor h = matmul(x, x);
  Tensor root = sum(add(h, h));
  Graph g = Graph::from_root(root);

  std::set<detail::TensorNode*> seen;
  for (auto* n : g.order) CHECK(seen.insert(n).second);  // unique
  // Parents precede children.
  std::map<detail::TensorNode*, size_t> pos;
  for (size_t i = 0; i < g.order.size(); ++i) pos[g.order[i]] = i;
  for (auto* n : g.order)
    for (auto& p : n->parents) CHECK(pos[p.get()] < pos[n]);
  REQUIRE(g.leaves.size() == 1);
  CHECK(g.leaves[0] == x.node());
}

// Every registered op passes central finite differences on 10 seeded random
// instances; the op table below must cover registered_op_names() exactly.
TEST_CASE("finite differences cover every registered op") {
  struct OpCase {
    const char* name;
    std::function<GradCheckReport(Rng&)> run;
  };

  auto simple_unary = [](Tensor (*op)(const Tensor&), bool avoid_kink) {
    return [op, avoid_kink](Rng& rng) {
      Tensor x = avoid_kink ? random_param_no_kink({3, 4}, rng)
                            : random_param({3, 4}, rng);
      std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
      Rng wrng(rng.next_u64());
      Tensor w = Tensor::rand_uniform({3, 4}, wrng, 0.5, 1.5);
      auto f = [&, w] { return sum(hadamard(op(x), w)); };
      return finite_difference_check(f, params, kFdStep);
    };
  };

  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](Rng& rng) {
    Tensor a = random_param({3, 4}, rng);
    Tensor b = random_param({4, 2}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"a", a}, {"b", b}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 2}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(matmul(a, b), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"linear", [](Rng& rng) {
    Tensor x = random_param({3, 4}, rng);
    Tensor w = random_param({4, 2}, rng);
    Tensor b = random_param({2}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}, {"w", w}, {"b", b}};
    Rng wrng(rng.next_u64());
    Tensor mask = Tensor::rand_uniform({3, 2}, wrng, 0.5, 1.5);
    auto f = [&, mask] { return sum(hadamard(linear(x, w, b), mask)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"transpose", [](Rng& rng) {
    Tensor x = random_param({3, 5}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({5, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(transpose(x), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"softmax_rows", [](Rng& rng) {
    Tensor x = random_param({3, 4}, rng, -2, 2);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 4}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(softmax_rows(x), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"add", [](Rng& rng) {
    Tensor a = random_param({2, 3}, rng), b = random_param({2, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"a", a}, {"b", b}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({2, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(add(a, b), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"sub", [](Rng& rng) {
    Tensor a = random_param({2, 3}, rng), b = random_param({2, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"a", a}, {"b", b}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({2, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(sub(a, b), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"hadamard", [](Rng& rng) {
    Tensor a = random_param({2, 3}, rng), b = random_param({2, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"a", a}, {"b", b}};
    auto f = [&] { return sum(hadamard(a, b)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"add_rowvec", [](Rng& rng) {
    Tensor x = random_param({3, 4}, rng);
    Tensor v = random_param({4}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}, {"v", v}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 4}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(add_rowvec(x, v), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"mul_rowvec", [](Rng& rng) {
    Tensor x = random_param({3, 4}, rng);
    Tensor v = random_param_no_kink({4}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}, {"v", v}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 4}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(mul_rowvec(x, v), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"scale", [](Rng& rng) {
    Tensor x = random_param({3, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(scale(x, -1.7), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"add_const", [](Rng& rng) {
    Tensor x = random_param({3, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(add_const(x, 0.37), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"log", [](Rng& rng) {
    Tensor x = Tensor::rand_uniform({3, 3}, rng, 0.1, 2.0, true);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(log(x), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"relu", simple_unary(&relu, true)});
  cases.push_back({"gelu", simple_unary(&gelu, false)});
  cases.push_back({"abs", simple_unary(&pbact::abs, true)});
  cases.push_back({"sum", [](Rng& rng) {
    Tensor x = random_param({4}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    auto f = [&] { return sum(x); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"mean", [](Rng& rng) {
    Tensor x = random_param({4, 2}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    auto f = [&] { return mean(hadamard(x, x)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"layer_norm", [](Rng& rng) {
    Tensor x = random_param({3, 6}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 6}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(layer_norm(x), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"col_slice", [](Rng& rng) {
    Tensor x = random_param({3, 6}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 3}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(col_slice(x, 2, 3), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"col_concat", [](Rng& rng) {
    Tensor a = random_param({3, 2}, rng), b = random_param({3, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"a", a}, {"b", b}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({3, 5}, wrng, 0.5, 1.5);
    auto f = [&, w] {
      std::vector<Tensor> parts{a, b};
      return sum(hadamard(col_concat(parts), w));
    };
    return finite_difference_check(f, params, kFdStep);
  }});
  cases.push_back({"reshape", [](Rng& rng) {
    Tensor x = random_param({3, 4}, rng);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    Rng wrng(rng.next_u64());
    Tensor w = Tensor::rand_uniform({6, 2}, wrng, 0.5, 1.5);
    auto f = [&, w] { return sum(hadamard(reshape(x, {6, 2}), w)); };
    return finite_difference_check(f, params, kFdStep);
  }});

  std::set<std::string> covered;
  for (const auto& c : cases) covered.insert(c.name);
  std::set<std::string> registered(registered_op_names().begin(),
                                   registered_op_names().end());
  CHECK(covered == registered);

  for (const auto& c : cases) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed * 977 + 13);
      const auto report = c.run(rng);
      INFO(c.name, " seed ", seed, " max_rel_error ", report.max_rel_error,
           " worst ", report.worst.param, "[", report.worst.index, "] analytic ",
           report.worst.analytic, " numeric ", report.worst.numeric);
      CHECK(report.passed(kFdTol));
    }
  }
}

TEST_CASE("finite_difference_check basics") {
  SUBCASE("quadratic at x = 3") {
    Tensor x = Tensor::from({1}, {3.0}, true);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    auto f = [&] { return sum(hadamard(x, x)); };
    const auto report = finite_difference_check(f, params, kFdStep);
    CHECK(report.worst.analytic == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(report.worst.numeric == doctest::Approx(6.0).epsilon(1e-8));
    CHECK(report.passed(kFdTol));
  }

  SUBCASE("softmax cross-entropy composite") {
    Rng rng(21);
    Tensor logits = random_param({2, 5}, rng, -1, 1);
    Tensor target = softmax_rows(Tensor::rand_uniform({2, 5}, rng, -1, 1));
    std::vector<std::pair<std::string, Tensor>> params{{"logits", logits}};
    auto f = [&] {
      return scale(sum(hadamard(target, log(softmax_rows(logits)))), -1.0);
    };
    const auto report = finite_difference_check(f, params, kFdStep);
    CHECK(report.passed(kFdTol));
  }

  SUBCASE("deliberately corrupted gradient rule is flagged") {
    Tensor x = Tensor::from({3}, {0.4, -0.8, 1.2}, true);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    auto corrupted_double = [&] {
      std::vector<double> out(3);
      for (int i = 0; i < 3; ++i) out[i] = 2.0 * x.value_at(i);
      return make_op_result("corrupted", {3}, std::move(out), {x},
                            [](detail::TensorNode& self) {
                              auto& p = *self.parents[0];
                              p.ensure_grad();
                              for (size_t i = 0; i < 3; ++i)
                                p.grad[i] += self.grad[i] * 2.1;  // wrong: 2.0
                            });
    };
    auto f = [&] { return sum(corrupted_double()); };
    const auto report = finite_difference_check(f, params, kFdStep);
    CHECK(report.max_rel_error > 1e-2);
  }

  SUBCASE("h must be positive") {
    Tensor x = Tensor::zeros({1}, true);
    std::vector<std::pair<std::string, Tensor>> params{{"x", x}};
    CHECK_THROWS_AS(
        finite_difference_check([&] { return sum(x); }, params, 0.0), UsageError);
  }
}

TEST_CASE("exact_sum is correctly rounded and order independent") {
  Rng rng(123);
  std::vector<double> xs(101);
  for (auto& x : xs) x = rng.uniform(0.0, 3.0);

  const double s1 = exact_sum(xs);
  std::vector<double> shuffled = xs;
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
  CHECK(exact_sum(shuffled) == s1);  // bitwise

  // Duplicating the multiset doubles the sum exactly.
  std::vector<double> doubled = xs;
  doubled.insert(doubled.end(), xs.begin(), xs.end());
  CHECK(exact_sum(doubled) == 2.0 * s1);

  CHECK(exact_sum(std::vector<double>{}) == 0.0);
  CHECK(exact_sum(std::vector<double>{0.1, 0.2, 0.3}) ==
        doctest::Approx(0.6).epsilon(1e-15));

  CHECK(sample_stddev(std::vector<double>{0.7, 0.8}) ==
        doctest::Approx(0.07071067811865475).epsilon(1e-12));
  CHECK(sample_stddev(std::vector<double>{0.9}) == 0.0);
}

TEST_CASE("rng determinism and substreams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c = Rng::fork(42, 0), d = Rng::fork(42, 1);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ = differ || (c.next_u64() != d.next_u64());
  CHECK(differ);

  Rng e(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = e.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK_THROWS_AS(e.uniform_index(0), UsageError);
}
