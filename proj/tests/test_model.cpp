#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uaro/model.hpp"

#include <random>

using namespace uaro;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

constexpr double kHover = 0.5 * 0.15 * 9.81;  // per-motor thrust at equilibrium

}  // namespace

TEST_CASE("box basics") {
  const model::Box b = model::Box::uniform(2, -1.0, 2.0);
  CHECK(b.dim() == 2);
  CHECK(b.contains(vec({0, 0})));
  CHECK_FALSE(b.contains(vec({-1.5, 0})));
  CHECK(b.clamp(vec({-3, 5})).isApprox(vec({-1, 2})));
  CHECK(b.center().isApprox(vec({0.5, 0.5})));
  CHECK(b.vertices().size() == 4);
  CHECK_THROWS_AS(model::Box(vec({1.0}), vec({0.0})), std::invalid_argument);
}

TEST_CASE("quadrotor hover is a fixed point at every step") {
  const auto m = model::buildQuadrotor(1.0, 0.001);
  const VectorXd u = vec({kHover, kHover});
  const VectorXd w = VectorXd::Zero(1);
  for (int k = 0; k < m.N; ++k) {
    const VectorXd next = model::step(m, k, VectorXd::Zero(6), u, w);
    CHECK(next.lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("quadrotor vertical channel matches constant-acceleration form") {
  const auto m = model::buildQuadrotor(1.0, 0.001);
  const double a = 4.0 / 0.15 - 9.81;
  const double Ts = 0.5;
  const VectorXd next =
      model::step(m, 0, VectorXd::Zero(6), vec({2, 2}), VectorXd::Zero(1));
  CHECK(next(3) == doctest::Approx(a * Ts).epsilon(1e-12));          // sdot
  CHECK(next(2) == doctest::Approx(0.5 * a * Ts * Ts).epsilon(1e-12));  // s
  CHECK(std::abs(next(0)) < 1e-12);
  CHECK(std::abs(next(4)) < 1e-12);
}

TEST_CASE("quadrotor angular channel is an exact double integrator") {
  const auto m = model::buildQuadrotor(1.0, 0.001);
  const VectorXd next =
      model::step(m, 0, VectorXd::Zero(6), vec({2, 0}), VectorXd::Zero(1));
  // psidd = l(u1-u2)/I = 0.1*2/0.00125 = 160
  CHECK(next(5) == doctest::Approx(80.0).epsilon(1e-12));
  CHECK(next(4) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("rollout composes step and tracks the toy chain") {
  const auto toy = model::buildToyIntegrator();
  const auto t = model::rollout(toy, {vec({1}), vec({-1})},
                                {vec({0.5}), vec({-0.5})});
  CHECK(t.states[0](0) == 0.0);
  CHECK(t.states[1](0) == doctest::Approx(1.5));
  CHECK(std::abs(t.states[2](0)) < 1e-12);

  const auto m = model::buildQuadrotor(1.0, 0.001);
  std::vector<VectorXd> us(m.N, vec({kHover, kHover})), ws(m.N, vec({0}));
  const auto hov = model::rollout(m, us, ws);
  for (const auto& x : hov.states)
    CHECK(x.lpNorm<Eigen::Infinity>() < 1e-9);

  std::vector<VectorXd> full(m.N, vec({2, 2}));
  const auto up = model::rollout(m, full, ws);
  const double a = 4.0 / 0.15 - 9.81;
  CHECK(up.states.back()(2) ==
        doctest::Approx(0.5 * a * 2.5 * 2.5).epsilon(1e-10));
  for (int k = 0; k < m.N; ++k)
    CHECK(up.states[k + 1].isApprox(
        model::step(m, k, up.states[k], full[k], ws[k])));
  CHECK(model::evalCost(m, up) ==
        doctest::Approx(-0.5 * a * 2.5 * 2.5).epsilon(1e-10));
}

TEST_CASE("constraint residuals") {
  const auto m = model::buildQuadrotor(1.0, 0.001);
  SUBCASE("at the origin") {
    model::Trajectory t;
    t.states.assign(m.N + 1, VectorXd::Zero(6));
    t.controls.assign(m.N, vec({kHover, kHover}));
    t.disturbances.assign(m.N, vec({0}));
    for (const auto& g : model::evalConstraints(m, t))
      CHECK(g.isApprox(vec({-1, -1, 0})));
  }
  SUBCASE("lateral excursion") {
    VectorXd x = VectorXd::Zero(6);
    x(0) = 1.2;
    CHECK(model::constraintAt(m, 3, x)(0) == doctest::Approx(0.2));
  }
  SUBCASE("toy-feas terminal row") {
    const auto f = model::buildToyFeas();
    const VectorXd g = model::constraintAt(f, 2, vec({0.41}));
    CHECK(g(0) == doctest::Approx(0.01));
    CHECK(g(1) == doctest::Approx(-0.81));
  }
}

TEST_CASE("toy builders and costs") {
  const auto toy = model::buildToyIntegrator();
  CHECK(toy.N == 2);
  CHECK(toy.controlBox.lower(0) == -1.0);
  CHECK(toy.disturbBox.upper(0) == 0.5);
  const auto t1 =
      model::rollout(toy, {vec({0}), vec({0})}, {vec({0.5}), vec({0.5})});
  CHECK(t1.states.back()(0) == doctest::Approx(1.0));
  CHECK(model::evalCost(toy, t1) == doctest::Approx(1.0));

  const auto feas = model::buildToyFeas();
  CHECK(feas.disturbBox.upper(0) == 0.3);
  const auto t2 =
      model::rollout(feas, {vec({0}), vec({0})}, {vec({0.3}), vec({0.3})});
  CHECK(t2.states.back()(0) == doctest::Approx(0.6));
  CHECK(model::constraintAt(feas, 2, t2.states.back())(0) ==
        doctest::Approx(0.2));

  CHECK_THROWS_AS(model::buildQuadrotor(0.0, 0.001), std::invalid_argument);
  CHECK_THROWS_AS(model::buildQuadrotor(1.0, -0.1), std::invalid_argument);
}

TEST_CASE("angular channel is affine in torque inputs") {
  const auto m = model::buildQuadrotor(1.0, 0.01);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd x(6);
    for (int i = 0; i < 6; ++i) x(i) = 0.2 * ud(rng);
    const VectorXd u = vec({ud(rng), ud(rng)});
    auto psiPart = [&](double du, double w) {
      const VectorXd next =
          model::step(m, 0, x, vec({u(0) + du, u(1) - du}), vec({w}));
      return std::pair{next(4), next(5)};
    };
    // slope in (u1 - u2) must be constant: compare secants at two widths
    const auto [p0, v0] = psiPart(0.0, 0.0);
    const auto [p1, v1] = psiPart(0.1, 0.0);
    const auto [p2, v2] = psiPart(0.2, 0.0);
    CHECK((p2 - p1) == doctest::Approx(p1 - p0).epsilon(1e-9));
    CHECK((v2 - v1) == doctest::Approx(v1 - v0).epsilon(1e-9));
    const auto [q1, r1] = psiPart(0.0, 0.005);
    const auto [q2, r2] = psiPart(0.0, 0.01);
    CHECK((q2 - q1) == doctest::Approx(q1 - p0).epsilon(1e-9));
    CHECK((r2 - r1) == doctest::Approx(r1 - v0).epsilon(1e-9));
  }
}

TEST_CASE("history bookkeeping") {
  model::History h;
  h.states.push_back(vec({0}));
  CHECK(h.consistent());
  CHECK(h.step() == 0);
  h = model::extend(h, vec({1}), vec({0.5}), vec({1.5}));
  CHECK(h.consistent());
  CHECK(h.step() == 1);
  CHECK(h.currentState()(0) == doctest::Approx(1.5));
  const auto t = model::toTrajectory(h);
  CHECK(t.states.size() == 2);
  CHECK(t.controls.size() == 1);
}

TEST_CASE("non-finite dynamics are reported with the step index") {
  auto m = model::buildToyIntegrator();
  m.stepFn = [](int, const VectorXd& x, const VectorXd&, const VectorXd&) {
    return VectorXd(x * std::numeric_limits<double>::infinity());
  };
  try {
    model::step(m, 1, vec({1}), vec({0}), vec({0}));
    FAIL("expected ModelError");
  } catch (const model::ModelError& e) {
    CHECK(e.k == 1);
  }
}
