#include "uaro/model.hpp"

#include <cmath>

namespace uaro::model {

Box::Box(VectorXd lo, VectorXd up) : lower(std::move(lo)), upper(std::move(up)) {
  if (lower.size() != upper.size())
    throw std::invalid_argument("Box: dimension mismatch");
  for (int i = 0; i < lower.size(); ++i)
    if (!(lower(i) <= upper(i)))
      throw std::invalid_argument("Box: lower > upper at component " +
                                  std::to_string(i));
}

Box Box::uniform(int dim, double lo, double up) {
  return Box(VectorXd::Constant(dim, lo), VectorXd::Constant(dim, up));
}

bool Box::contains(const VectorXd& p, double tol) const {
  if (p.size() != lower.size()) return false;
  for (int i = 0; i < p.size(); ++i)
    if (p(i) < lower(i) - tol || p(i) > upper(i) + tol) return false;
  return true;
}

VectorXd Box::clamp(const VectorXd& p) const {
  return p.cwiseMax(lower).cwiseMin(upper);
}

std::vector<VectorXd> Box::vertices() const {
  const int d = dim();
  std::vector<VectorXd> out;
  out.reserve(std::size_t{1} << d);
  for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
    VectorXd v(d);
    for (int i = 0; i < d; ++i)
      v(i) = (mask >> i) & 1 ? upper(i) : lower(i);
    out.push_back(std::move(v));
  }
  return out;
}

bool History::consistent() const {
  return !states.empty() && controls.size() == disturbances.size() &&
         controls.size() + 1 == states.size();
}

History extend(const History& h, const VectorXd& u, const VectorXd& w,
               const VectorXd& xNext) {
  History out = h;
  out.controls.push_back(u);
  out.disturbances.push_back(w);
  out.states.push_back(xNext);
  return out;
}

Trajectory toTrajectory(const History& h) {
  return Trajectory{h.states, h.controls, h.disturbances};
}

namespace {
void requireFinite(const VectorXd& v, const char* what, int k) {
  if (!v.allFinite())
    throw ModelError(std::string(what) + " produced a non-finite value at k=" +
                         std::to_string(k),
                     k);
}
}  // namespace

VectorXd step(const SystemModel& m, int k, const VectorXd& x, const VectorXd& u,
              const VectorXd& w) {
  VectorXd next = m.stepFn(k, x, u, w);
  requireFinite(next, "dynamics", k);
  return next;
}

Trajectory rollout(const SystemModel& m, const std::vector<VectorXd>& controls,
                   const std::vector<VectorXd>& disturbances) {
  if (static_cast<int>(controls.size()) != m.N ||
      static_cast<int>(disturbances.size()) != m.N)
    throw std::invalid_argument("rollout: expected " + std::to_string(m.N) +
                                " controls and disturbances");
  Trajectory t;
  t.states.reserve(m.N + 1);
  t.states.push_back(m.initialState);
  t.controls = controls;
  t.disturbances = disturbances;
  for (int k = 0; k < m.N; ++k)
    t.states.push_back(step(m, k, t.states[k], controls[k], disturbances[k]));
  return t;
}

VectorXd constraintAt(const SystemModel& m, int k, const VectorXd& x) {
  VectorXd rows = m.pathConstraint ? m.pathConstraint(k, x) : VectorXd(0);
  if (k == m.N && m.terminalConstraint) {
    VectorXd term = m.terminalConstraint(x);
    VectorXd all(rows.size() + term.size());
    all << rows, term;
    rows = std::move(all);
  }
  requireFinite(rows, "constraint", k);
  return rows;
}

std::vector<VectorXd> evalConstraints(const SystemModel& m, const Trajectory& t) {
  std::vector<VectorXd> out;
  out.reserve(m.N);
  for (int k = 1; k <= m.N; ++k) out.push_back(constraintAt(m, k, t.states[k]));
  return out;
}

double evalCost(const SystemModel& m, const Trajectory& t) {
  const double J = m.cost(t);
  if (!std::isfinite(J))
    throw ModelError("cost produced a non-finite value", m.N);
  return J;
}

SystemModel buildQuadrotor(double c, double wmax) {
  if (!(c > 0)) throw std::invalid_argument("buildQuadrotor: c must be > 0");
  if (!(wmax >= 0)) throw std::invalid_argument("buildQuadrotor: wmax must be >= 0");

  static constexpr double mass = 0.15;
  static constexpr double inertia = 0.00125;
  static constexpr double arm = 0.1;
  static constexpr double grav = 9.81;
  static constexpr double Ts = 0.5;

  SystemModel m;
  m.name = "quadrotor";
  m.N = 5;
  m.n_x = 6;
  m.n_u = 2;
  m.n_w = 1;
  m.initialState = VectorXd::Zero(6);
  m.controlBox = Box::uniform(2, -2.0, 2.0);
  m.disturbBox = Box::uniform(1, -wmax, wmax);

  auto fc = [](const VectorXd& x, const VectorXd& u, const VectorXd& w) {
    const double thrust = u(0) + u(1);
    VectorXd d(6);
    d(0) = x(1);
    d(1) = std::sin(x(4)) * thrust / mass;
    d(2) = x(3);
    d(3) = std::cos(x(4)) * thrust / mass - grav;
    d(4) = x(5);
    d(5) = (arm * (u(0) - u(1)) + w(0)) / inertia;
    return d;
  };
  m.stepFn = [fc](int, const VectorXd& x, const VectorXd& u, const VectorXd& w) {
    const VectorXd mid = x + 0.5 * Ts * fc(x, u, w);
    return VectorXd(x + Ts * fc(mid, u, w));
  };
  m.pathConstraint = [c](int, const VectorXd& x) {
    VectorXd g(3);
    g(0) = x(0) - c;
    g(1) = -x(0) - c;
    g(2) = -x(2);
    return g;
  };
  m.cost = [](const Trajectory& t) { return -t.states.back()(2); };
  return m;
}

namespace {
SystemModel buildToyChain(double wmaxAbs) {
  SystemModel m;
  m.N = 2;
  m.n_x = 1;
  m.n_u = 1;
  m.n_w = 1;
  m.initialState = VectorXd::Zero(1);
  m.controlBox = Box::uniform(1, -1.0, 1.0);
  m.disturbBox = Box::uniform(1, -wmaxAbs, wmaxAbs);
  m.stepFn = [](int, const VectorXd& x, const VectorXd& u, const VectorXd& w) {
    return VectorXd(x + u + w);
  };
  m.cost = [](const Trajectory& t) {
    const double xN = t.states.back()(0);
    return xN * xN;
  };
  return m;
}
}  // namespace

SystemModel buildToyIntegrator() {
  SystemModel m = buildToyChain(0.5);
  m.name = "toy-integrator";
  m.pathConstraint = [](int, const VectorXd& x) {
    VectorXd g(2);
    g(0) = x(0) - 2.0;
    g(1) = -x(0) - 2.0;
    return g;
  };
  return m;
}

SystemModel buildToyFeas() {
  SystemModel m = buildToyChain(0.3);
  m.name = "toy-feas";
  m.terminalConstraint = [](const VectorXd& x) {
    VectorXd g(2);
    g(0) = x(0) - 0.4;
    g(1) = -x(0) - 0.4;
    return g;
  };
  return m;
}

}  // namespace uaro::model
