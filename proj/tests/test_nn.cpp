#include <doctest.h>

#include <cmath>

#include "pivotal/error.hpp"
#include "pivotal/nn.hpp"
#include "pivotal/random.hpp"

using namespace pivotal;
using namespace pivotal::nn;

TEST_CASE("forward examples") {
  Mlp zero({3, 4, 2});
  const double x[] = {1, -2, 3};
  for (double v : forward(zero, x)) CHECK(v == 0.0);

  Mlp lin({1, 1});
  lin.parameters()[0] = 2.0;
  lin.parameters()[1] = 1.0;
  const double three[] = {3.0};
  CHECK(forward(lin, three)[0] == 7.0);

  Mlp id({1, 1, 1});
  id.weight(0)(0, 0) = 1.0;
  id.weight(1)(0, 0) = 1.0;
  const double origin[] = {0.0};
  CHECK(forward(id, origin)[0] == 0.0);

  const double wrong[] = {1.0, 2.0};
  CHECK_THROWS_AS(forward(lin, wrong), Error);
}

TEST_CASE("backward examples") {
  Mlp lin({1, 1});
  lin.parameters()[0] = 2.0;
  lin.parameters()[1] = 1.0;
  const double three[] = {3.0};
  const double one[] = {1.0};
  const auto g = backward(lin, three, one);
  CHECK(g.parameters[0] == 3.0);
  CHECK(g.parameters[1] == 1.0);
  CHECK(g.input[0] == 2.0);

  const Mlp net = Mlp::glorot({2, 5, 3}, 1);
  const double x[] = {0.3, -0.7};
  const double zeros[] = {0.0, 0.0, 0.0};
  for (double v : backward(net, x, zeros).parameters) CHECK(v == 0.0);
}

TEST_CASE("batched passes agree with single-row passes") {
  const Mlp net = Mlp::glorot({3, 6, 4, 2}, 9);
  CounterRng rng(4);
  RowMatrix in(5, 3);
  RowMatrix og(5, 2);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < og.size(); ++i) og.data()[i] = rng.normal();
  ForwardCache cache;
  const RowMatrix out = forward_batch(net, in, &cache);
  std::vector<double> summed(net.parameter_count(), 0.0);
  backward_batch(net, cache, og, summed);
  std::vector<double> expected(net.parameter_count(), 0.0);
  for (Eigen::Index r = 0; r < 5; ++r) {
    const std::span<const double> row(in.row(r).data(), 3);
    const auto single = forward(net, row);
    CHECK(single[0] == doctest::Approx(out(r, 0)).epsilon(1e-14));
    const auto g = backward(net, row, std::span<const double>(og.row(r).data(), 2));
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += g.parameters[i];
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(summed[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("adam examples") {
  std::vector<double> p = {1.0, -2.0};
  AdamState state(2);
  const std::vector<double> zero = {0.0, 0.0};
  adam_step(state, p, zero);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);

  std::vector<double> q = {0.0, 0.0};
  AdamState first(2);
  const std::vector<double> g = {0.37, -5.0};
  adam_step(first, q, g);
  CHECK(q[0] == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(q[1] == doctest::Approx(1e-3).epsilon(1e-4));

  std::vector<double> r = {0.0};
  AdamState many(1);
  const std::vector<double> pos = {0.5};
  double previous = r[0];
  for (int i = 0; i < 100; ++i) {
    adam_step(many, r, pos);
    CHECK(r[0] < previous);
    previous = r[0];
  }
}

TEST_CASE("adam rejects non-finite gradients with the parameter index") {
  std::vector<double> p = {1.0, 2.0, 3.0};
  AdamState state(3);
  const std::vector<double> g = {0.1, std::nan(""), 0.2};
  try {
    adam_step(state, p, g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_finite);
    REQUIRE(e.index().has_value());
    CHECK(*e.index() == 1);
  }
  CHECK(p == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("clip_global_norm") {
  std::vector<double> g = {3.0, 4.0};
  CHECK(clip_global_norm(g, 10.0) == 5.0);
  CHECK(g[0] == 3.0);
  CHECK(clip_global_norm(g, 1.0) == 5.0);
  CHECK(std::hypot(g[0], g[1]) == doctest::Approx(1.0));
}

TEST_CASE("json round trip and determinism") {
  const Mlp a = Mlp::glorot({2, 8, 3}, 77);
  const Mlp b = Mlp::glorot({2, 8, 3}, 77);
  CHECK(std::ranges::equal(a.parameters(), b.parameters()));
  const auto doc = to_json(a);
  CHECK(doc.contains("format_version"));
  const Mlp back = mlp_from_json(doc);
  CHECK(back.layer_sizes() == a.layer_sizes());
  CHECK(std::ranges::equal(back.parameters(), a.parameters()));
}
