#include "uaro/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>

namespace uaro::mpc {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
  return a;
}

double nowMs() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch())
      .count();
}

double maxRow(const Eigen::VectorXd& g) {
  return g.size() ? g.maxCoeff() : -std::numeric_limits<double>::infinity();
}

}  // namespace

const char* statusName(RunStatus s) {
  switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::ProblemInfeasible: return "problem-infeasible";
    case RunStatus::SolverFailure: return "solver-failure";
  }
  return "?";
}

const char* driverName(Driver d) {
  return d == Driver::Uaro ? "uaro" : "ro";
}

DisturbanceSource DisturbanceSource::seededRandom(std::uint64_t seed) {
  DisturbanceSource s;
  s.mode = SourceMode::SeededRandom;
  s.seed = seed;
  return s;
}

DisturbanceSource DisturbanceSource::fixed(std::vector<VectorXd> seq) {
  DisturbanceSource s;
  s.mode = SourceMode::FixedSequence;
  s.sequence = std::move(seq);
  return s;
}

DisturbanceSource DisturbanceSource::zero(const model::SystemModel& m) {
  return fixed(std::vector<VectorXd>(
      m.N, m.disturbBox.clamp(VectorXd::Zero(m.n_w))));
}

DisturbanceSource DisturbanceSource::adversarial(std::uint64_t seed) {
  DisturbanceSource s;
  s.mode = SourceMode::AdversarialReplay;
  s.seed = seed;
  return s;
}

VectorXd drawDisturbance(const model::SystemModel& m,
                         const DisturbanceSource& src, int k,
                         const History& hist, const VectorXd& control) {
  switch (src.mode) {
    case SourceMode::FixedSequence: {
      if (k >= static_cast<int>(src.sequence.size()))
        throw std::invalid_argument("DisturbanceSource: sequence too short");
      return m.disturbBox.clamp(src.sequence[k]);
    }
    case SourceMode::SeededRandom: {
      std::mt19937_64 rng(mix(src.seed, static_cast<std::uint64_t>(k)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      VectorXd w(m.n_w);
      for (int j = 0; j < m.n_w; ++j)
        w(j) = m.disturbBox.lower(j) + unit(rng) * m.disturbBox.width(j);
      return w;
    }
    case SourceMode::AdversarialReplay: {
      // Pick the box vertex that hurts the next-step constraints the most,
      // tie-broken toward higher cost when the trajectory would complete.
      const auto verts = m.disturbBox.vertices();
      VectorXd best = verts.front();
      double bestScore = -std::numeric_limits<double>::infinity();
      for (const auto& w : verts) {
        const VectorXd next =
            model::step(m, k, hist.currentState(), control, w);
        double score = maxRow(model::constraintAt(m, k + 1, next));
        if (k == m.N - 1)
          score += 1e-6 * model::evalCost(
                              m, model::toTrajectory(
                                     model::extend(hist, control, w, next)));
        if (score > bestScore) {
          bestScore = score;
          best = w;
        }
      }
      return best;
    }
  }
  throw std::logic_error("DisturbanceSource: bad mode");
}

MpcTrace runUaroMpc(const model::SystemModel& m, const DisturbanceSource& src,
                    const MpcConfig& cfg) {
  nested::NestedSolver solver(m, cfg.nested);
  return runUaroMpc(m, src, cfg, solver);
}

MpcTrace runUaroMpc(const model::SystemModel& m, const DisturbanceSource& src,
                    const MpcConfig& cfg, nested::NestedSolver& solver) {
  MpcTrace trace;
  History z;
  z.states.push_back(m.initialState);
  // Cap each step's bound decision at the previous certified gamma: the true
  // optimum can only improve after a disturbance realizes, so the cap never
  // excludes it, and the reported trace is monotone by construction.
  double prevGamma = std::numeric_limits<double>::infinity();

  for (int k = 0; k < m.N; ++k) {
    const double t0 = nowMs();
    solver.resetCounters();
    nested::NodeContext ctx{&m, k, z};
    ctx.boundCap = prevGamma;
    const nested::NestedSolution sol = solver.solveNode(ctx);
    const double t1 = nowMs();

    if (sol.status == nested::NestedStatus::Infeasible) {
      trace.status = k == 0 ? RunStatus::ProblemInfeasible
                            : RunStatus::SolverFailure;
      trace.failStep = k;
      trace.message = k == 0 ? "root problem infeasible at k=0"
                             : "infeasible after a feasible step (numerical)";
      trace.history = z;
      return trace;
    }
    if (sol.control.size() != m.n_u || !std::isfinite(sol.bound)) {
      trace.status = RunStatus::SolverFailure;
      trace.failStep = k;
      trace.message = "no usable iterate at k=" + std::to_string(k);
      trace.history = z;
      return trace;
    }

    const VectorXd u = m.controlBox.clamp(sol.control);
    const VectorXd w = drawDisturbance(m, src, k, z, u);
    const VectorXd xNext = model::step(m, k, z.currentState(), u, w);

    prevGamma = sol.bound;

    StepRecord rec;
    rec.k = k;
    rec.gamma = sol.bound;
    rec.control = u;
    rec.disturbance = w;
    rec.nextState = xNext;
    rec.nodeSolves = sol.nodeSolves;
    rec.wallMs = t1 - t0;
    trace.steps.push_back(std::move(rec));

    z = model::extend(z, u, w, xNext);
  }
  trace.realizedCost = model::evalCost(m, model::toTrajectory(z));
  trace.history = z;
  return trace;
}

namespace {

// Flat open-loop SIP over the remaining controls u_k..u_{N-1} plus the bound
// gamma; the scenario variable stacks the remaining disturbances.
sip::SipProblem roProblem(const model::SystemModel& m, const History& z) {
  const int k = z.step();
  const int steps = m.N - k;
  sip::SipProblem p;
  p.decisionDim = steps * m.n_u + 1;
  {
    VectorXd lo(p.decisionDim), hi(p.decisionDim);
    for (int i = 0; i < steps; ++i) {
      lo.segment(i * m.n_u, m.n_u) = m.controlBox.lower;
      hi.segment(i * m.n_u, m.n_u) = m.controlBox.upper;
    }
    lo(p.decisionDim - 1) = -1e4;
    hi(p.decisionDim - 1) = 1e4;
    p.decisionBox = model::Box(lo, hi);
  }
  const int gammaIdx = p.decisionDim - 1;
  p.objective = [gammaIdx](const VectorXd& v) { return v(gammaIdx); };
  p.objectiveGrad = [gammaIdx](const VectorXd& v) {
    VectorXd g = VectorXd::Zero(v.size());
    g(gammaIdx) = 1.0;
    return g;
  };
  p.scenarioDim = steps * m.n_w;
  {
    VectorXd lo(p.scenarioDim), hi(p.scenarioDim);
    for (int i = 0; i < steps; ++i) {
      lo.segment(i * m.n_w, m.n_w) = m.disturbBox.lower;
      hi.segment(i * m.n_w, m.n_w) = m.disturbBox.upper;
    }
    p.scenarioBox = model::Box(lo, hi);
  }
  p.constraint = [&m, z, k, steps, gammaIdx](const VectorXd& vd,
                                             const VectorXd& ws) {
    History h = z;
    std::vector<double> rows;
    for (int i = 0; i < steps; ++i) {
      const VectorXd u = vd.segment(i * m.n_u, m.n_u);
      const VectorXd w = ws.segment(i * m.n_w, m.n_w);
      const VectorXd next = model::step(m, k + i, h.currentState(), u, w);
      const VectorXd g = model::constraintAt(m, k + i + 1, next);
      for (int r = 0; r < g.size(); ++r) rows.push_back(g(r));
      h = model::extend(h, u, w, next);
    }
    rows.push_back(model::evalCost(m, model::toTrajectory(h)) - vd(gammaIdx));
    return Eigen::Map<VectorXd>(rows.data(),
                                static_cast<Eigen::Index>(rows.size()))
        .eval();
  };
  return p;
}

}  // namespace

MpcTrace runRoMpc(const model::SystemModel& m, const DisturbanceSource& src,
                  const MpcConfig& cfg) {
  MpcTrace trace;
  History z;
  z.states.push_back(m.initialState);

  std::vector<VectorXd> heldPlan;  // remaining plan when not re-solving
  double heldGamma = 0.0;
  VectorXd warmTail;

  for (int k = 0; k < m.N; ++k) {
    const double t0 = nowMs();
    VectorXd u;
    double gamma;
    if (k == 0 || cfg.roResolveEveryStep) {
      const sip::SipProblem p = roProblem(m, z);
      sip::SipConfig scfg = cfg.roSip;
      scfg.seed = mix(cfg.roSip.seed, static_cast<std::uint64_t>(k));
      if (warmTail.size() == p.decisionDim) scfg.start = warmTail;
      const sip::SipSolution sol = sip::solveSip(p, sip::ScenarioSet{}, scfg);
      if (sol.status == sip::SipStatus::Infeasible) {
        trace.status = RunStatus::ProblemInfeasible;
        trace.failStep = k;
        trace.message = "open-loop problem infeasible at k=" + std::to_string(k);
        trace.history = z;
        return trace;
      }
      if (sol.status == sip::SipStatus::BudgetExhausted &&
          sol.decision.size() != p.decisionDim) {
        trace.status = RunStatus::SolverFailure;
        trace.failStep = k;
        trace.message = "open-loop solve failed at k=" + std::to_string(k);
        trace.history = z;
        return trace;
      }
      gamma = sol.objectiveValue;
      u = m.controlBox.clamp(sol.decision.head(m.n_u));
      if (!cfg.roResolveEveryStep) {
        heldPlan.clear();
        const int steps = m.N - k;
        for (int i = 0; i < steps; ++i)
          heldPlan.push_back(
              m.controlBox.clamp(sol.decision.segment(i * m.n_u, m.n_u)));
        heldGamma = gamma;
      }
      // Warm start for the next (one step shorter) problem: drop u_k.
      const int nextDim = (m.N - k - 1) * m.n_u + 1;
      if (nextDim > m.n_u) {
        warmTail.resize(nextDim);
        warmTail.head(nextDim - 1) =
            sol.decision.segment(m.n_u, nextDim - 1);
        warmTail(nextDim - 1) = sol.decision(sol.decision.size() - 1);
      }
    } else {
      u = heldPlan[static_cast<std::size_t>(k)];
      gamma = heldGamma;
    }
    const double t1 = nowMs();

    const VectorXd w = drawDisturbance(m, src, k, z, u);
    const VectorXd xNext = model::step(m, k, z.currentState(), u, w);

    StepRecord rec;
    rec.k = k;
    rec.gamma = gamma;
    rec.control = u;
    rec.disturbance = w;
    rec.nextState = xNext;
    rec.nodeSolves = 1;
    rec.wallMs = t1 - t0;
    trace.steps.push_back(std::move(rec));

    z = model::extend(z, u, w, xNext);
  }
  trace.realizedCost = model::evalCost(m, model::toTrajectory(z));
  trace.history = z;
  return trace;
}

MonteCarloSummary monteCarlo(const model::SystemModel& m, Driver driver,
                             int runs, std::uint64_t seed,
                             const MpcConfig& cfg) {
  if (runs < 1) throw std::invalid_argument("monteCarlo: runs must be >= 1");

  std::vector<MpcTrace> traces(runs);
  const double t0 = nowMs();

  int threads = cfg.threads > 0
                    ? cfg.threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, runs));

  // Sequential runs share one solver: the memo and the step-0 solution cache
  // make every run after the first skip the (identical) initial solve.
  std::unique_ptr<nested::NestedSolver> shared;
  if (driver == Driver::Uaro && threads == 1)
    shared = std::make_unique<nested::NestedSolver>(m, cfg.nested);

  auto runOne = [&](int i) {
    const DisturbanceSource src =
        DisturbanceSource::seededRandom(mix(seed, static_cast<std::uint64_t>(i)));
    if (driver != Driver::Uaro) return runRoMpc(m, src, cfg);
    return shared ? runUaroMpc(m, src, cfg, *shared) : runUaroMpc(m, src, cfg);
  };
  if (threads == 1) {
    for (int i = 0; i < runs; ++i) traces[i] = runOne(i);
  } else {
    for (int base = 0; base < runs; base += threads) {
      const int batch = std::min(threads, runs - base);
      std::vector<std::future<MpcTrace>> futs;
      futs.reserve(batch);
      for (int j = 0; j < batch; ++j)
        futs.push_back(std::async(std::launch::async, runOne, base + j));
      for (int j = 0; j < batch; ++j) traces[base + j] = futs[j].get();
    }
  }
  return summarize(m, driver, std::move(traces), nowMs() - t0);
}

MonteCarloSummary summarize(const model::SystemModel& m, Driver driver,
                            std::vector<MpcTrace> traces, double wallMs) {
  MonteCarloSummary out;
  out.driver = driver;
  out.runs = static_cast<int>(traces.size());
  out.traces = std::move(traces);
  out.wallMs = wallMs;

  const int N = m.N;
  out.meanGamma.assign(N, 0.0);
  out.minGamma.assign(N, std::numeric_limits<double>::infinity());
  out.maxGamma.assign(N, -std::numeric_limits<double>::infinity());

  auto fold = [](Stats& s, double v, bool first) {
    if (first) {
      s.mean = s.min = s.max = v;
    } else {
      s.mean += v;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
  };

  for (const MpcTrace& t : out.traces) {
    if (!t.complete()) {
      if (t.status == RunStatus::ProblemInfeasible) ++out.problemInfeasible;
      else ++out.solverFailures;
      continue;
    }
    const bool first = out.completed == 0;
    fold(out.negCost, -t.realizedCost, first);
    fold(out.initialGap, t.initialGap(), first);
    out.meanGamma0 += t.initialBound();
    for (const StepRecord& r : t.steps) {
      out.meanGamma[r.k] += r.gamma;
      out.minGamma[r.k] = std::min(out.minGamma[r.k], r.gamma);
      out.maxGamma[r.k] = std::max(out.maxGamma[r.k], r.gamma);
    }
    ++out.completed;
  }
  if (out.completed > 0) {
    out.negCost.mean /= out.completed;
    out.initialGap.mean /= out.completed;
    out.meanGamma0 /= out.completed;
    for (int k = 0; k < N; ++k) out.meanGamma[k] /= out.completed;
  }
  return out;
}

}  // namespace uaro::mpc
