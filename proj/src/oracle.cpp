#include "uaro/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace uaro::oracle {

namespace {

constexpr double kConstraintTol = 1e-12;

bool rowsOk(const VectorXd& g) {
  return g.size() == 0 || g.maxCoeff() <= kConstraintTol;
}

bool stateOk(const model::SystemModel& m, int k, const VectorXd& x) {
  return rowsOk(model::constraintAt(m, k, x));
}

}  // namespace

std::vector<VectorXd> boxGrid(const model::Box& box, int points) {
  if (points < 2) throw std::invalid_argument("boxGrid: need >= 2 points");
  const int d = box.dim();
  std::vector<std::vector<double>> axes(d);
  for (int i = 0; i < d; ++i) {
    if (box.width(i) == 0.0) {
      axes[i] = {box.lower(i)};
      continue;
    }
    axes[i].reserve(points);
    for (int j = 0; j < points; ++j)
      axes[i].push_back(box.lower(i) + box.width(i) * j / (points - 1));
  }
  std::vector<VectorXd> out;
  std::vector<int> idx(d, 0);
  while (true) {
    VectorXd p(d);
    for (int i = 0; i < d; ++i) p(i) = axes[i][idx[i]];
    out.push_back(std::move(p));
    int i = 0;
    for (; i < d; ++i) {
      if (++idx[i] < static_cast<int>(axes[i].size())) break;
      idx[i] = 0;
    }
    if (i == d) break;
  }
  return out;
}

ClosedLoopDp::ClosedLoopDp(const model::SystemModel& m, GridSpec grid)
    : m_(m), grid_(grid) {
  uGrid_ = boxGrid(m.controlBox, grid_.controlPoints);
  wGrid_ = boxGrid(m.disturbBox, grid_.disturbancePoints);
}

double ClosedLoopDp::valueFrom(int k, model::History& hist, VectorXd* bestControl) {
  if (k == m_.N) return model::evalCost(m_, model::toTrajectory(hist));
  double best = kInfeasible;
  for (const auto& u : uGrid_) {
    double worst = -kInfeasible;
    for (const auto& w : wGrid_) {
      if (++nodes_ > grid_.nodeBudget)
        throw std::runtime_error("oracle: node budget exceeded");
      const VectorXd next = model::step(m_, k, hist.currentState(), u, w);
      double v;
      if (!stateOk(m_, k + 1, next)) {
        v = kInfeasible;
      } else {
        hist.controls.push_back(u);
        hist.disturbances.push_back(w);
        hist.states.push_back(next);
        v = valueFrom(k + 1, hist, nullptr);
        hist.controls.pop_back();
        hist.disturbances.pop_back();
        hist.states.pop_back();
      }
      worst = std::max(worst, v);
      if (worst == kInfeasible) break;
    }
    if (worst < best) {
      best = worst;
      if (bestControl) *bestControl = u;
    }
  }
  return best;
}

DpResult ClosedLoopDp::solve() {
  model::History hist;
  hist.states.push_back(m_.initialState);
  DpResult r;
  r.value = valueFrom(0, hist, &r.rootControl);
  return r;
}

VectorXd ClosedLoopDp::policyControl(int k, const model::History& hist) {
  model::History h = hist;
  VectorXd best;
  const double v = valueFrom(k, h, &best);
  if (!std::isfinite(v))
    throw std::runtime_error("oracle policy: no feasible control at k=" +
                             std::to_string(k));
  return best;
}

DpResult dpClosedLoop(const model::SystemModel& m, const GridSpec& grid) {
  return ClosedLoopDp(m, grid).solve();
}

namespace {

// Worst case of J over gridded disturbance suffixes for a fixed control
// suffix; +inf if any gridded disturbance violates a constraint.
double openLoopWorst(const model::SystemModel& m,
                     const std::vector<VectorXd>& wGrid, model::History& hist,
                     const std::vector<VectorXd>& controls, std::size_t at,
                     long& nodes, long budget) {
  if (at == controls.size())
    return model::evalCost(m, model::toTrajectory(hist));
  const int k = hist.step();
  double worst = -kInfeasible;
  for (const auto& w : wGrid) {
    if (++nodes > budget) throw std::runtime_error("oracle: node budget exceeded");
    const VectorXd next = model::step(m, k, hist.currentState(), controls[at], w);
    double v;
    if (!stateOk(m, k + 1, next)) {
      v = kInfeasible;
    } else {
      hist.controls.push_back(controls[at]);
      hist.disturbances.push_back(w);
      hist.states.push_back(next);
      v = openLoopWorst(m, wGrid, hist, controls, at + 1, nodes, budget);
      hist.controls.pop_back();
      hist.disturbances.pop_back();
      hist.states.pop_back();
    }
    worst = std::max(worst, v);
    if (worst == kInfeasible) break;
  }
  return worst;
}

void enumerateSequences(const std::vector<VectorXd>& uGrid, int steps,
                        std::vector<VectorXd>& seq,
                        const std::function<void(const std::vector<VectorXd>&)>& fn) {
  if (static_cast<int>(seq.size()) == steps) {
    fn(seq);
    return;
  }
  for (const auto& u : uGrid) {
    seq.push_back(u);
    enumerateSequences(uGrid, steps, seq, fn);
    seq.pop_back();
  }
}

}  // namespace

DpResult dpOpenLoop(const model::SystemModel& m, const GridSpec& grid) {
  const auto uGrid = boxGrid(m.controlBox, grid.controlPoints);
  const auto wGrid = boxGrid(m.disturbBox, grid.disturbancePoints);
  DpResult r;
  long nodes = 0;
  std::vector<VectorXd> seq;
  enumerateSequences(uGrid, m.N, seq, [&](const std::vector<VectorXd>& controls) {
    model::History hist;
    hist.states.push_back(m.initialState);
    const double worst =
        openLoopWorst(m, wGrid, hist, controls, 0, nodes, grid.nodeBudget);
    if (worst < r.value) {
      r.value = worst;
      r.rootControl = controls.front();
    }
  });
  return r;
}

bool memberUbar(const model::SystemModel& m, int k, const model::History& hist,
                const std::vector<VectorXd>& controlSuffix, const GridSpec& grid) {
  if (static_cast<int>(controlSuffix.size()) != m.N - k)
    throw std::invalid_argument("memberUbar: suffix length mismatch");
  const auto wGrid = boxGrid(m.disturbBox, grid.disturbancePoints);
  model::History h = hist;
  long nodes = 0;
  const double worst =
      openLoopWorst(m, wGrid, h, controlSuffix, 0, nodes, grid.nodeBudget);
  return std::isfinite(worst);
}

namespace {

bool feasibleFrom(const model::SystemModel& m,
                  const std::vector<VectorXd>& uGrid,
                  const std::vector<VectorXd>& wGrid, int k,
                  model::History& hist, long& nodes, long budget);

bool controlFeasible(const model::SystemModel& m,
                     const std::vector<VectorXd>& uGrid,
                     const std::vector<VectorXd>& wGrid, int k,
                     model::History& hist, const VectorXd& u, long& nodes,
                     long budget) {
  for (const auto& w : wGrid) {
    if (++nodes > budget) throw std::runtime_error("oracle: node budget exceeded");
    const VectorXd next = model::step(m, k, hist.currentState(), u, w);
    if (!stateOk(m, k + 1, next)) return false;
    hist.controls.push_back(u);
    hist.disturbances.push_back(w);
    hist.states.push_back(next);
    const bool ok = feasibleFrom(m, uGrid, wGrid, k + 1, hist, nodes, budget);
    hist.controls.pop_back();
    hist.disturbances.pop_back();
    hist.states.pop_back();
    if (!ok) return false;
  }
  return true;
}

bool feasibleFrom(const model::SystemModel& m,
                  const std::vector<VectorXd>& uGrid,
                  const std::vector<VectorXd>& wGrid, int k,
                  model::History& hist, long& nodes, long budget) {
  if (k == m.N) return true;
  for (const auto& u : uGrid)
    if (controlFeasible(m, uGrid, wGrid, k, hist, u, nodes, budget)) return true;
  return false;
}

}  // namespace

bool memberUstar(const model::SystemModel& m, int k, const model::History& hist,
                 const VectorXd& control, const GridSpec& grid) {
  const auto uGrid = boxGrid(m.controlBox, grid.controlPoints);
  const auto wGrid = boxGrid(m.disturbBox, grid.disturbancePoints);
  model::History h = hist;
  long nodes = 0;
  return controlFeasible(m, uGrid, wGrid, k, h, control, nodes, grid.nodeBudget);
}

}  // namespace uaro::oracle
