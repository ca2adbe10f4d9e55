#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "pbact/attention.hpp"
#include "pbact/errors.hpp"
#include "pbact/gradcheck.hpp"
#include "pbact/losses.hpp"
#include "pbact/rng.hpp"

using namespace pbact;

namespace {

// Independent re-composition of the biased-attention formula with plain
// loops: softmax(((Q + a*PB*Wq) K^T) / sqrt(d_head)) (V + a*PB*Wv) per head.
std::vector<double> oracle_attention(const std::vector<double>& q,
                                     const std::vector<double>& k,
                                     const std::vector<double>& v,
                                     const std::vector<double>& pb,
                                     const std::vector<double>& wq,
                                     const std::vector<double>& wv, double alpha,
                                     int len, int d_model, int d_pb, int heads) {
  auto project = [&](const std::vector<double>& w) {
    std::vector<double> out(static_cast<size_t>(len) * d_model, 0.0);
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < d_model; ++j)
        for (int p = 0; p < d_pb; ++p)
          out[i * d_model + j] += pb[i * d_pb + p] * w[p * d_model + j];
    return out;
  };
  const auto pbq = project(wq);
  const auto pbv = project(wv);
  std::vector<double> qe(q), ve(v);
  for (size_t i = 0; i < qe.size(); ++i) {
    qe[i] += alpha * pbq[i];
    ve[i] += alpha * pbv[i];
  }

  const int dh = d_model / heads;
  std::vector<double> out(static_cast<size_t>(len) * d_model, 0.0);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < len; ++i) {
      std::vector<double> scores(len, 0.0);
      for (int j = 0; j < len; ++j) {
        double dot = 0.0;
        for (int c = 0; c < dh; ++c)
          dot += qe[i * d_model + off + c] * k[j * d_model + off + c];
        scores[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double denom = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        denom += s;
      }
      for (double& s : scores) s /= denom;
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int j = 0; j < len; ++j) acc += scores[j] * ve[j * d_model + off + c];
        out[i * d_model + off + c] = acc;
      }
    }
  }
  return out;
}

std::vector<double> to_vec(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

struct Setup {
  int len = 6, d_model = 8, d_pb = 5, heads = 2;
  Tensor q, k, v;
  ParametricBias pb;
  PbProjection proj;

  explicit Setup(uint64_t seed, double alpha, bool zero_pb = false) {
    Rng rng(seed);
    q = Tensor::rand_uniform({len, d_model}, rng, -1, 1);
    k = Tensor::rand_uniform({len, d_model}, rng, -1, 1);
    v = Tensor::rand_uniform({len, d_model}, rng, -1, 1);
    pb.demo_id = "demo";
    pb.matrix = zero_pb ? Tensor::zeros({len, d_pb}, true)
                        : Tensor::rand_uniform({len, d_pb}, rng, -1, 1, true);
    proj.layer_index = 0;
    proj.w_q = xavier_uniform(d_pb, d_model, rng);
    proj.w_v = xavier_uniform(d_pb, d_model, rng);
    proj.alpha_pb = alpha;
  }
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("identity reductions to standard attention") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    SUBCASE("alpha_pb = 0") {
      Setup s(seed, 0.0);
      auto [with_pb, t1] = attention_with_pb(s.q, s.k, s.v, s.pb, s.proj, s.heads);
      auto [plain, t2] = scaled_dot_attention(s.q, s.k, s.v, s.heads);
      CHECK(max_abs_diff(with_pb.values(), plain.values()) <= 1e-6);
    }
    SUBCASE("zero PB, any alpha") {
      Setup s(seed, 0.7, /*zero_pb=*/true);
      auto [with_pb, t1] = attention_with_pb(s.q, s.k, s.v, s.pb, s.proj, s.heads);
      auto [plain, t2] = scaled_dot_attention(s.q, s.k, s.v, s.heads);
      CHECK(max_abs_diff(with_pb.values(), plain.values()) <= 1e-6);
    }
  }
}

TEST_CASE("attention matches the direct formula oracle") {
  for (uint64_t seed = 100; seed < 110; ++seed) {
    Setup s(seed, 0.1);
    auto [out, trace] = attention_with_pb(s.q, s.k, s.v, s.pb, s.proj, s.heads);
    const auto expected = oracle_attention(
        to_vec(s.q), to_vec(s.k), to_vec(s.v), to_vec(s.pb.matrix),
        to_vec(s.proj.w_q), to_vec(s.proj.w_v), 0.1, s.len, s.d_model, s.d_pb,
        s.heads);
    CHECK(max_abs_diff(out.values(), expected) <= 1e-6);
  }
}

TEST_CASE("traces are row-stochastic") {
  Setup s(7, 0.3);
  auto [out, trace] = attention_with_pb(s.q, s.k, s.v, s.pb, s.proj, s.heads);
  REQUIRE(trace.mats.size() == static_cast<size_t>(s.heads));
  for (const auto& m : trace.mats) {
    for (int i = 0; i < s.len; ++i) {
      double row = 0.0;
      for (int j = 0; j < s.len; ++j) {
        const double a = m.value_at(i * s.len + j);
        CHECK(a >= 0.0);
        row += a;
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK(trace.pb_demo_id == "demo");
}

TEST_CASE("distinct nonzero PBs produce distinct traces") {
  Rng rng(31);
  Setup s(31, 0.2);
  ParametricBias other;
  other.demo_id = "other";
  other.matrix = Tensor::rand_uniform({s.len, s.d_pb}, rng, -1, 1, true);
  auto [o1, t1] = attention_with_pb(s.q, s.k, s.v, s.pb, s.proj, s.heads);
  auto [o2, t2] = attention_with_pb(s.q, s.k, s.v, other, s.proj, s.heads);
  double diff = 0.0;
  for (size_t i = 0; i < t1.mats.size(); ++i)
    diff = std::max(diff, max_abs_diff(t1.mats[i].values(), t2.mats[i].values()));
  CHECK(diff > 0.0);
}

TEST_CASE("gradients flow into the PB matrix and projections") {
  Setup s(13, 0.25);
  Rng wrng(99);
  Tensor w = Tensor::rand_uniform({s.len, s.d_model}, wrng, 0.5, 1.5);
  std::vector<std::pair<std::string, Tensor>> params{
      {"pb", s.pb.matrix}, {"w_q", s.proj.w_q}, {"w_v", s.proj.w_v}};
  auto f = [&] {
    auto [out, trace] = attention_with_pb(s.q, s.k, s.v, s.pb, s.proj, s.heads);
    return sum(hadamard(out, w));
  };
  const auto report = finite_difference_check(f, params, 1e-5);
  INFO("max_rel_error ", report.max_rel_error);
  CHECK(report.passed(1e-4));
}

TEST_CASE("PB length mismatch is a dimension error") {
  Setup s(5, 0.1);
  ParametricBias bad;
  bad.demo_id = "bad";
  bad.matrix = Tensor::zeros({s.len + 1, s.d_pb}, true);
  CHECK_THROWS_AS(attention_with_pb(s.q, s.k, s.v, bad, s.proj, s.heads),
                  DimensionError);
}

TEST_CASE("pb table lookup and construction") {
  PbTable table({{"a", Label::kSuccess}, {"b", Label::kFailure}}, 4, 5);
  CHECK(table.size() == 2);
  CHECK(table.lookup("a").demo_id == "a");
  CHECK(table.lookup("a").matrix.shape() == Shape{4, 5});
  for (double v : table.lookup("a").matrix.values()) CHECK(v == 0.0);
  CHECK(table.label_of("b") == Label::kFailure);
  CHECK_THROWS_AS(table.lookup("missing"), MissingPbError);
  CHECK(table.parameter_count() == 2 * 4 * 5);

  using Demos = std::vector<std::pair<std::string, Label>>;
  CHECK_THROWS_AS(PbTable(Demos{{"x", Label::kSuccess}, {"x", Label::kFailure}},
                          4, 5),
                  IntegrityError);
}

TEST_CASE("negative sampling") {
  SUBCASE("singleton opposite set") {
    PbTable table({{"a", Label::kSuccess}, {"b", Label::kFailure}}, 4, 5);
    Rng rng(1);
    CHECK(table.sample_negative(Label::kSuccess, rng).demo_id == "b");
    CHECK(table.sample_negative(Label::kFailure, rng).demo_id == "a");
  }

  SUBCASE("no opposite label available") {
    PbTable table({{"a", Label::kSuccess}, {"b", Label::kSuccess}}, 4, 5);
    Rng rng(1);
    CHECK_THROWS_AS(table.sample_negative(Label::kSuccess, rng),
                    NegativeUnavailableError);
  }

  SUBCASE("uniform over the opposite set: 10k draws over 5 PBs") {
    std::vector<std::pair<std::string, Label>> demos{{"s", Label::kSuccess}};
    for (int i = 0; i < 5; ++i)
      demos.emplace_back("f" + std::to_string(i), Label::kFailure);
    PbTable table(demos, 4, 5);
    Rng rng(12345);
    std::map<std::string, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
      counts[table.sample_negative(Label::kSuccess, rng).demo_id]++;
    REQUIRE(counts.size() == 5);
    for (const auto& [id, n] : counts) {
      const double freq = static_cast<double>(n) / draws;
      INFO(id, " freq ", freq);
      CHECK(freq == doctest::Approx(0.2).epsilon(0.1));  // 0.2 +- 0.02
    }
  }

  SUBCASE("deterministic given rng state") {
    std::vector<std::pair<std::string, Label>> demos{{"s", Label::kSuccess}};
    for (int i = 0; i < 7; ++i)
      demos.emplace_back("f" + std::to_string(i), Label::kFailure);
    PbTable table(demos, 4, 5);
    Rng a(9), b(9);
    for (int i = 0; i < 50; ++i)
      CHECK(table.sample_negative(Label::kSuccess, a).demo_id ==
            table.sample_negative(Label::kSuccess, b).demo_id);
  }
}

TEST_CASE("pb table serialization is byte-stable and round-trips") {
  PbTable table({{"a", Label::kSuccess}, {"b", Label::kFailure}}, 3, 5);
  Rng rng(8);
  for (auto& v : table.lookup("a").matrix.mutable_values()) v = rng.uniform(-1, 1);

  const std::string j1 = table.to_json();
  PbTable loaded = PbTable::from_json(j1);
  CHECK(loaded.to_json() == j1);
  CHECK(loaded.length() == 3);
  CHECK(loaded.pb_dim() == 5);
  CHECK(loaded.label_of("a") == Label::kSuccess);
  const auto orig = table.lookup("a").matrix.values();
  const auto copy = loaded.lookup("a").matrix.values();
  for (size_t i = 0; i < orig.size(); ++i) CHECK(orig[i] == copy[i]);

  // Version gate.
  std::string bumped = j1;
  const auto pos = bumped.find("\"format_version\": 1");
  REQUIRE(pos != std::string::npos);
  bumped.replace(pos, std::string("\"format_version\": 1").size(),
                 "\"format_version\": 2");
  CHECK_THROWS_AS(PbTable::from_json(bumped), IntegrityError);
}
