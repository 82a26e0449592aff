#include "uaro/sip.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace uaro::sip {

bool ScenarioSet::add(const VectorXd& w) {
  for (const auto& q : points_)
    if ((q - w).lpNorm<Eigen::Infinity>() <= dupTol_) return false;
  points_.push_back(w);
  return true;
}

const char* statusName(SipStatus s) {
  switch (s) {
    case SipStatus::Converged: return "converged";
    case SipStatus::Infeasible: return "infeasible";
    case SipStatus::BudgetExhausted: return "budget-exhausted";
  }
  return "?";
}

namespace {

double maxRow(const VectorXd& g) {
  return g.size() ? g.maxCoeff() : -std::numeric_limits<double>::infinity();
}

nlp::NlpProblem masterProblem(const SipProblem& p, const ScenarioSet& scen) {
  nlp::NlpProblem m;
  m.dim = p.decisionDim;
  m.bounds = p.decisionBox;
  m.objective = p.objective;
  if (p.objectiveGrad) m.objectiveGrad = p.objectiveGrad;
  const auto& pts = scen.points();
  m.inequalities = [&p, pts](const VectorXd& v) {
    std::vector<VectorXd> rows;
    rows.reserve(pts.size());
    Eigen::Index total = 0;
    for (const auto& w : pts) {
      rows.push_back(p.constraint(v, w));
      total += rows.back().size();
    }
    VectorXd out(total);
    Eigen::Index at = 0;
    for (const auto& r : rows) {
      out.segment(at, r.size()) = r;
      at += r.size();
    }
    return out;
  };
  return m;
}

}  // namespace

std::pair<VectorXd, double> maxViolation(const SipProblem& p,
                                         const VectorXd& candidate,
                                         const SipConfig& cfg) {
  auto violation = [&](const VectorXd& w) {
    return maxRow(p.constraint(candidate, w));
  };

  std::vector<VectorXd> starts;
  if (p.scenarioDim <= cfg.vertexDimLimit)
    starts = p.scenarioBox.vertices();
  starts.push_back(p.scenarioBox.clamp(VectorXd::Zero(p.scenarioDim)));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < cfg.multistartCount; ++i) {
    VectorXd w(p.scenarioDim);
    for (int j = 0; j < p.scenarioDim; ++j)
      w(j) = p.scenarioBox.lower(j) + unit(rng) * p.scenarioBox.width(j);
    starts.push_back(std::move(w));
  }

  VectorXd bestW = starts.front();
  double bestV = -std::numeric_limits<double>::infinity();
  nlp::NlpProblem ascent;
  ascent.dim = p.scenarioDim;
  ascent.bounds = p.scenarioBox;
  ascent.objective = [&](const VectorXd& w) { return -violation(w); };
  nlp::NlpConfig acfg = cfg.nlp;
  acfg.maxInner = cfg.searchInnerIters;
  acfg.maxOuter = 1;

  for (const auto& s : starts) {
    VectorXd w = s;
    double v = violation(w);
    if (cfg.searchInnerIters > 0) {
      const nlp::NlpResult r = nlp::solveNlp(ascent, w, acfg);
      if (r.status != nlp::NlpStatus::EvaluationError &&
          -r.objectiveValue > v) {
        w = r.point;
        v = -r.objectiveValue;
      }
    }
    if (v > bestV) {
      bestV = v;
      bestW = w;
    }
  }
  return {bestW, bestV};
}

SipSolution solveSip(const SipProblem& p, const ScenarioSet& initialScenarios,
                     const SipConfig& cfg) {
  SipSolution sol;
  sol.scenarios = initialScenarios;
  if (sol.scenarios.empty())
    sol.scenarios.add(p.scenarioBox.clamp(VectorXd::Zero(p.scenarioDim)));

  VectorXd warm = cfg.start ? *cfg.start : p.decisionBox.center();
  double prevObjective = -std::numeric_limits<double>::infinity();

  for (int outer = 0; outer < cfg.maxOuter; ++outer) {
    sol.outerIterations = outer + 1;
    const nlp::NlpProblem master = masterProblem(p, sol.scenarios);
    nlp::NlpResult res = nlp::solveNlp(master, warm, cfg.nlp);
    if (!res.usable(10 * cfg.nlp.feasTol) && cfg.masterRetryStarts > 0) {
      nlp::MultistartConfig ms;
      ms.starts = cfg.masterRetryStarts;
      ms.seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
      const nlp::NlpResult retry = nlp::multistart(master, ms, cfg.nlp);
      if (retry.usable(10 * cfg.nlp.feasTol) ||
          retry.maxInequality < res.maxInequality)
        res = retry;
    }
    // an Infeasible label on a numerically feasible point is a stalled
    // penalty loop; only a genuinely violated point ends the solve
    if (!res.feasible(10 * cfg.nlp.feasTol) ||
        res.status == nlp::NlpStatus::EvaluationError) {
      sol.decision = res.point;
      sol.objectiveValue = res.objectiveValue;
      sol.status = res.status == nlp::NlpStatus::Infeasible
                       ? SipStatus::Infeasible
                       : SipStatus::BudgetExhausted;
      return sol;
    }

    if (cfg.validate && res.objectiveValue < prevObjective - 1e-6)
      throw std::logic_error("solveSip: master objective decreased");
    prevObjective = std::max(prevObjective, res.objectiveValue);

    sol.decision = res.point;
    sol.objectiveValue = res.objectiveValue;
    warm = res.point;

    auto [w, viol] = maxViolation(p, sol.decision, cfg);
    sol.worstViolation = viol;
    const double tol =
        std::max(cfg.sipTol, cfg.relTol * std::abs(res.objectiveValue));
    if (viol <= tol) {
      sol.status = SipStatus::Converged;
      return sol;
    }
    if (!sol.scenarios.add(w)) {
      // Witness already stored but still violated: the master tolerance is
      // the limiting factor; report the best iterate.
      sol.status = viol <= 10 * tol ? SipStatus::Converged
                                    : SipStatus::BudgetExhausted;
      return sol;
    }
  }
  sol.status = SipStatus::BudgetExhausted;
  return sol;
}

CertifyResult certify(const SipProblem& p, const VectorXd& candidate,
                      const SipConfig& cfg) {
  auto [w, viol] = maxViolation(p, candidate, cfg);
  CertifyResult r;
  r.violation = viol;
  r.certified = viol <= cfg.sipTol;
  if (!r.certified) r.witness = w;
  return r;
}

}  // namespace uaro::sip
