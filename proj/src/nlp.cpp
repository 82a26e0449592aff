#include "uaro/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <future>
#include <limits>
#include <random>
#include <vector>

namespace uaro::nlp {

namespace {

struct EvalError {};

double checkedObjective(const NlpProblem& p, const VectorXd& x) {
  double f;
  try {
    f = p.objective(x);
  } catch (const std::exception&) {
    throw EvalError{};
  }
  if (!std::isfinite(f)) throw EvalError{};
  return f;
}

VectorXd checkedIneq(const NlpProblem& p, const VectorXd& x) {
  if (!p.inequalities) return VectorXd(0);
  VectorXd g;
  try {
    g = p.inequalities(x);
  } catch (const std::exception&) {
    throw EvalError{};
  }
  if (!g.allFinite()) throw EvalError{};
  return g;
}

VectorXd objectiveGradient(const NlpProblem& p, const VectorXd& x, double f0,
                           double h) {
  if (p.objectiveGrad) return p.objectiveGrad(x);
  VectorXd grad(p.dim);
  VectorXd xp = x;
  for (int j = 0; j < p.dim; ++j) {
    const double hj = h * std::max(1.0, std::abs(x(j)));
    xp(j) = x(j) + hj;
    grad(j) = (checkedObjective(p, xp) - f0) / hj;
    xp(j) = x(j);
  }
  return grad;
}

MatrixXd inequalityJacobian(const NlpProblem& p, const VectorXd& x,
                            const VectorXd& g0, double h) {
  if (p.inequalityJac) return p.inequalityJac(x);
  MatrixXd jac(g0.size(), p.dim);
  VectorXd xp = x;
  for (int j = 0; j < p.dim; ++j) {
    const double hj = h * std::max(1.0, std::abs(x(j)));
    xp(j) = x(j) + hj;
    jac.col(j) = (checkedIneq(p, xp) - g0) / hj;
    xp(j) = x(j);
  }
  return jac;
}

double maxIneq(const VectorXd& g) { return g.size() ? g.maxCoeff() : 0.0; }

// Augmented Lagrangian value for multipliers lam, penalty mu.
double augLag(double f, const VectorXd& g, const VectorXd& lam, double mu) {
  double val = f;
  for (int i = 0; i < g.size(); ++i) {
    const double t = std::max(0.0, lam(i) + mu * g(i));
    val += (t * t - lam(i) * lam(i)) / (2.0 * mu);
  }
  return val;
}

struct InnerResult {
  VectorXd x;
  double f;
  VectorXd g;
  double pgNorm;
  int iterations;
};

// Spectral projected gradient on the augmented Lagrangian over the box.
InnerResult innerMinimize(const NlpProblem& p, VectorXd x, const VectorXd& lam,
                          double mu, const NlpConfig& cfg) {
  const auto& box = p.bounds;
  auto project = [&box](const VectorXd& v) { return box.clamp(v); };

  double f = checkedObjective(p, x);
  VectorXd g = checkedIneq(p, x);
  double L = augLag(f, g, lam, mu);

  auto gradL = [&](const VectorXd& xc, double fc, const VectorXd& gc) {
    VectorXd grad = objectiveGradient(p, xc, fc, cfg.fdStep);
    if (gc.size()) {
      const MatrixXd jac = inequalityJacobian(p, xc, gc, cfg.fdStep);
      const VectorXd mult = (lam + mu * gc).cwiseMax(0.0);
      grad += jac.transpose() * mult;
    }
    return grad;
  };

  VectorXd grad = gradL(x, f, g);
  double alpha = 1.0;
  std::deque<double> recent{L};
  double pgNorm = (project(x - grad) - x).lpNorm<Eigen::Infinity>();
  int it = 0;
  for (; it < cfg.maxInner && pgNorm > cfg.statTol; ++it) {
    const VectorXd d = project(x - alpha * grad) - x;
    const double slope = grad.dot(d);
    if (d.lpNorm<Eigen::Infinity>() < 1e-15 || slope >= 0) break;
    const double Lref = *std::max_element(recent.begin(), recent.end());
    double t = 1.0;
    bool accepted = false;
    double fNew = 0, LNew = 0;
    VectorXd xNew, gNew;
    for (int ls = 0; ls < 30; ++ls) {
      xNew = project(x + t * d);
      try {
        fNew = checkedObjective(p, xNew);
        gNew = checkedIneq(p, xNew);
      } catch (const EvalError&) {
        t *= 0.5;
        continue;
      }
      LNew = augLag(fNew, gNew, lam, mu);
      if (LNew <= Lref + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    const VectorXd gradNew = gradL(xNew, fNew, gNew);
    const VectorXd s = xNew - x;
    const VectorXd y = gradNew - grad;
    const double sy = s.dot(y);
    alpha = sy > 1e-14 ? std::clamp(s.dot(s) / sy, 1e-10, 1e10) : 1.0;

    x = std::move(xNew);
    f = fNew;
    g = std::move(gNew);
    L = LNew;
    grad = gradNew;
    recent.push_back(L);
    if (recent.size() > 10) recent.pop_front();
    pgNorm = (project(x - grad) - x).lpNorm<Eigen::Infinity>();
  }
  return {std::move(x), f, std::move(g), pgNorm, it};
}

}  // namespace

const char* statusName(NlpStatus s) {
  switch (s) {
    case NlpStatus::LocalOptimum: return "local-optimum";
    case NlpStatus::Infeasible: return "infeasible";
    case NlpStatus::IterationLimit: return "iteration-limit";
    case NlpStatus::EvaluationError: return "evaluation-error";
  }
  return "?";
}

namespace {

NlpResult solveNlpCore(const NlpProblem& p, const VectorXd& x0,
                       const NlpConfig& cfg) {
  NlpResult res;
  res.point = p.bounds.clamp(x0);
  try {
    VectorXd lam = VectorXd::Zero(p.inequalities ? p.numInequalities : 0);
    double mu = cfg.mu0;
    VectorXd x = res.point;

    // Size the multiplier vector from an actual evaluation; numInequalities
    // is advisory.
    {
      const VectorXd g0 = checkedIneq(p, x);
      if (g0.size() != lam.size()) lam = VectorXd::Zero(g0.size());
    }

    double vPrev = std::numeric_limits<double>::infinity();
    double vBest = vPrev;
    double lastPg = vPrev;
    int stalled = 0;
    int totalIters = 0;

    for (int outer = 0; outer < cfg.maxOuter; ++outer) {
      InnerResult in = innerMinimize(p, x, lam, mu, cfg);
      totalIters += std::max(1, in.iterations);
      x = in.x;
      const double v = std::max(0.0, maxIneq(in.g));

      res.point = x;
      res.objectiveValue = in.f;
      res.maxInequality = maxIneq(in.g);
      res.iterations = totalIters;

      lastPg = in.pgNorm;
      if (v <= cfg.feasTol && in.pgNorm <= 10 * cfg.statTol) {
        res.status = NlpStatus::LocalOptimum;
        return res;
      }
      if (lam.size() == 0) break;  // box-only problem, inner loop is final

      lam = (lam + mu * in.g).cwiseMax(0.0);
      if (v > 0.25 * vPrev) mu = std::min(mu * cfg.muGrowth, cfg.muMax);
      vPrev = v;

      if (v < vBest - std::max(1e-12, 1e-4 * vBest)) {
        vBest = v;
        stalled = 0;
      } else {
        ++stalled;
      }
      if (mu >= cfg.muMax && v > cfg.feasTol && stalled >= 3) {
        res.status = NlpStatus::Infeasible;
        return res;
      }
    }
    res.status = res.maxInequality <= cfg.feasTol && lastPg <= 10 * cfg.statTol
                     ? NlpStatus::LocalOptimum
                     : NlpStatus::IterationLimit;
    return res;
  } catch (const EvalError&) {
    res.status = NlpStatus::EvaluationError;
    return res;
  }
}

// Box-and-inequality QP  min q.d + d'Bd/2  s.t. dLo<=d<=dHi, Jd+g<=0,
// solved by ADMM on the stacked constraint [I; J]. When the linearized
// constraints are inconsistent the iterates settle on a least-violation
// compromise, which still gives a usable descent direction for the merit
// line search. Returns the step and the inequality multipliers.
struct QpOut {
  VectorXd d;
  VectorXd lam;
};

QpOut solveQp(const MatrixXd& B, const VectorXd& q, const VectorXd& dLo,
              const VectorXd& dHi, const MatrixXd& J, const VectorXd& g,
              int maxIter, double nu) {
  const int n = static_cast<int>(q.size());
  const int m = static_cast<int>(J.rows());
  const double sigma = 1e-6;
  double rho = 10.0;
  const MatrixXd JtJ = m ? MatrixXd(J.transpose() * J) : MatrixXd();
  Eigen::LDLT<MatrixXd> ldlt;
  auto refactor = [&] {
    MatrixXd K = B + (sigma + rho) * MatrixXd::Identity(n, n);
    if (m) K += rho * JtJ;
    ldlt.compute(K);
  };
  refactor();

  VectorXd zLo(n + m), zHi(n + m);
  zLo.head(n) = dLo;
  zHi.head(n) = dHi;
  if (m) {
    zLo.tail(m).setConstant(-1e20);
    zHi.tail(m) = -g;
  }
  VectorXd d = VectorXd::Zero(n);
  VectorXd z = VectorXd::Zero(n + m), y = VectorXd::Zero(n + m);
  VectorXd Ad(n + m);
  double primal = 0.0, dual = 0.0;
  for (int k = 0; k < maxIter; ++k) {
    const VectorXd w = rho * z - y;
    VectorXd rhs = sigma * d - q + w.head(n);
    if (m) rhs += J.transpose() * w.tail(m);
    d = ldlt.solve(rhs);
    Ad.head(n) = d;
    if (m) Ad.tail(m) = J * d;
    VectorXd zNew(n + m);
    zNew.head(n) =
        (Ad.head(n) + y.head(n) / rho).cwiseMax(zLo.head(n)).cwiseMin(zHi.head(n));
    // Elastic constraint rows: exceeding the bound costs nu per unit in the
    // QP objective (soft-threshold prox), so the subproblem is feasible even
    // when the linearization is not, and multipliers stay bounded by nu.
    for (int i = 0; i < m; ++i) {
      const double v = Ad(n + i) + y(n + i) / rho;
      const double u = zHi(n + i);
      zNew(n + i) = v <= u ? v : std::max(u, v - nu / rho);
    }
    y += rho * (Ad - zNew);
    primal = (Ad - zNew).lpNorm<Eigen::Infinity>();
    dual = rho * (zNew - z).lpNorm<Eigen::Infinity>();
    z = zNew;
    if (primal < 1e-9 && dual < 1e-9) break;
    // Residual balancing keeps the iteration count manageable across the
    // very differently scaled subproblems this sees.
    if ((k + 1) % 50 == 0 && primal > 0 && dual > 0) {
      const double ratio = primal / dual;
      if (ratio > 10.0 || ratio < 0.1) {
        rho = std::clamp(rho * std::sqrt(ratio), 1e-6, 1e6);
        refactor();
      }
    }
  }
  QpOut out;
  out.d = z.head(n);  // feasible w.r.t. the box by construction
  out.lam = m ? VectorXd(y.tail(m).cwiseMax(0.0)) : VectorXd(0);
  return out;
}

// Damped-BFGS SQP with an l1-merit line search. Returns LocalOptimum only
// for a feasible point with a negligible QP step; any other outcome is left
// to the augmented-Lagrangian fallback to classify.
NlpResult solveSqp(const NlpProblem& p, const VectorXd& x0,
                   const NlpConfig& cfg) {
  static const bool debug = std::getenv("UARO_NLP_DEBUG") != nullptr;
  NlpResult res;
  res.status = NlpStatus::IterationLimit;
  VectorXd x = p.bounds.clamp(x0);
  double f = checkedObjective(p, x);
  VectorXd g = checkedIneq(p, x);
  const int n = p.dim;
  const int m = static_cast<int>(g.size());
  VectorXd gradf = objectiveGradient(p, x, f, cfg.fdStep);
  MatrixXd J = m ? inequalityJacobian(p, x, g, cfg.fdStep) : MatrixXd(0, n);
  MatrixXd B = MatrixXd::Identity(n, n);
  double rho = 1.0;
  bool modelReset = false;
  bool bScaled = false;
  int consecFull = 0;
  const double boxSpan = (p.bounds.upper - p.bounds.lower).lpNorm<Eigen::Infinity>();
  double trust = boxSpan;  // l-inf cap on the QP step
  double violBest = std::numeric_limits<double>::infinity();
  int violStall = 0;

  for (int it = 0; it < cfg.sqpMaxIter; ++it) {
    res.point = x;
    res.objectiveValue = f;
    res.maxInequality = maxIneq(g);
    res.iterations = it;

    const VectorXd dLo =
        (p.bounds.lower - x).cwiseMax(VectorXd::Constant(n, -trust));
    const VectorXd dHi =
        (p.bounds.upper - x).cwiseMin(VectorXd::Constant(n, trust));
    const double viol = m ? g.cwiseMax(0.0).sum() : 0.0;
    QpOut qp = solveQp(B, gradf, dLo, dHi, J, g, cfg.qpMaxIter, rho);
    double violLin = 0.0;
    if (m) violLin = (g + J * qp.d).cwiseMax(0.0).sum();
    // Penalty escalation, only once feasibility progress has stalled at the
    // current weight, and only while a higher weight actually removes more
    // of the violation (the QP trades violation against objective at rate
    // rho); escalating during healthy progress or past the irreducible part
    // just drowns the objective.
    if (viol <= 0.95 * violBest) {
      violBest = viol;
      violStall = 0;
    } else {
      ++violStall;
    }
    auto stuckAtWeight = [&] {
      if (viol <= cfg.feasTol || rho >= 1e6) return false;
      if (violLin <= std::max(1e-8, 0.05 * viol)) return false;
      if (violStall >= 3) return true;
      // The merit is already stationary at this weight while infeasible:
      // only a heavier weight can make further feasibility progress.
      const double reduce = viol - violLin;
      return reduce <= 1e-10 || gradf.dot(qp.d) - rho * reduce > -1e-12;
    };
    for (int esc = 0; esc < 6 && stuckAtWeight(); ++esc) {
      const QpOut hi = solveQp(B, gradf, dLo, dHi, J, g, cfg.qpMaxIter, 10 * rho);
      const double linHi = (g + J * hi.d).cwiseMax(0.0).sum();
      if (linHi > 0.9 * violLin) break;
      rho *= 10.0;
      qp = hi;
      violLin = linHi;
      violStall = 0;
    }
    const double stepNorm = qp.d.lpNorm<Eigen::Infinity>();
    if (stepNorm <= cfg.statTol && stepNorm < 0.9 * trust) {
      if (res.maxInequality <= cfg.feasTol) res.status = NlpStatus::LocalOptimum;
      return res;
    }

    const double reduce = viol - violLin;
    double slope = gradf.dot(qp.d) - rho * reduce;
    if (slope > -1e-12) {
      if (viol <= cfg.feasTol) {
        // No merit descent available at a feasible point: treat as stationary.
        res.status = NlpStatus::LocalOptimum;
        return res;
      }
      if (reduce <= 1e-10) break;  // locally irreducible violation
      slope = -1e-12;
    }
    const double phi0 = f + rho * viol;

    double t = 1.0;
    bool accepted = false, socTried = false;
    double fNew = 0;
    VectorXd xNew, gNew;
    for (int ls = 0; ls < 30; ++ls) {
      xNew = p.bounds.clamp(x + t * qp.d);
      try {
        fNew = checkedObjective(p, xNew);
        gNew = checkedIneq(p, xNew);
      } catch (const EvalError&) {
        t *= 0.5;
        continue;
      }
      const double violNew = gNew.size() ? gNew.cwiseMax(0.0).sum() : 0.0;
      if (fNew + rho * violNew <= phi0 + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      if (m && t == 1.0 && !socTried) {
        // Second-order correction: re-solve with constraints evaluated at
        // the trial point to step back onto the curved constraint surface
        // instead of shrinking t along a direction that slides off it.
        socTried = true;
        const VectorXd gShift = gNew - J * qp.d;
        const QpOut soc =
            solveQp(B, gradf, dLo, dHi, J, gShift, cfg.qpMaxIter, rho);
        VectorXd xSoc = p.bounds.clamp(x + qp.d + (soc.d - qp.d));
        try {
          const double fSoc = checkedObjective(p, xSoc);
          const VectorXd gSoc = checkedIneq(p, xSoc);
          const double violSoc = gSoc.size() ? gSoc.cwiseMax(0.0).sum() : 0.0;
          if (fSoc + rho * violSoc <= phi0 + 1e-4 * slope) {
            xNew = std::move(xSoc);
            fNew = fSoc;
            gNew = gSoc;
            accepted = true;
            break;
          }
        } catch (const EvalError&) {
        }
      }
      t *= 0.5;
    }
    if (debug)
      std::fprintf(stderr,
                   "[sqp] it=%d f=%.6f viol=%.3e lin=%.3e step=%.3e tr=%.1e "
                   "rho=%.1e t=%g acc=%d\n",
                   it, f, viol, violLin, stepNorm, trust, rho,
                   t, accepted ? 1 : 0);
    if (!accepted) {
      trust = std::min(trust, stepNorm) * 0.25;
      if (trust <= 10 * cfg.statTol) {
        // Cannot make progress at any resolution; retry once from a fresh
        // quadratic model before giving up.
        if (modelReset) break;
        modelReset = true;
        B.setIdentity();
        bScaled = false;
        trust = boxSpan;
      }
      continue;
    }
    modelReset = false;
    if (t >= 1.0)
      trust = std::min(2.0 * trust, boxSpan);
    else if (t <= 0.125)
      trust = std::max(0.5 * trust, 100 * cfg.statTol);

    if (viol <= cfg.feasTol && violLin <= 1e-10) {
      const double target = (m ? qp.lam.lpNorm<Eigen::Infinity>() : 0.0) + 1.0;
      if (rho > target) rho = std::max(target, 0.5 * rho);
    }

    const VectorXd gradfNew = objectiveGradient(p, xNew, fNew, cfg.fdStep);
    const MatrixXd JNew =
        m ? inequalityJacobian(p, xNew, gNew, cfg.fdStep) : MatrixXd(0, n);
    const VectorXd s = xNew - x;
    VectorXd yv = gradfNew - gradf;
    if (m) yv += (JNew - J).transpose() * qp.lam;
    if (!bScaled) {
      // Size the initial quadratic model from the first observed curvature;
      // an identity model crawls on nearly linear objectives and over-steps
      // on stiff ones.
      const double sy0 = s.dot(yv);
      const double h = sy0 > 1e-12
                           ? std::clamp(yv.dot(yv) / sy0, 1e-6, 1e6)
                           : 1e-3;
      B = h * MatrixXd::Identity(n, n);
      bScaled = true;
    }
    const VectorXd Bs = B * s;
    const double sBs = s.dot(Bs);
    double sy = s.dot(yv);
    if (sy < 0.2 * sBs && sBs > 0) {  // Powell damping keeps B positive
      const double theta = 0.8 * sBs / (sBs - sy);
      yv = theta * yv + (1.0 - theta) * Bs;
      sy = s.dot(yv);
    }
    if (sy > 1e-12 && sBs > 1e-12)
      B += (yv * yv.transpose()) / sy - (Bs * Bs.transpose()) / sBs;
    consecFull = t >= 1.0 ? consecFull + 1 : 0;
    if (consecFull >= 3) {
      // Repeated full steps mean the implicit trust region is too small;
      // relaxing the model lets flat directions cross the box quickly.
      B *= 0.5;
      consecFull = 0;
    }

    x = std::move(xNew);
    f = fNew;
    g = std::move(gNew);
    gradf = gradfNew;
    J = JNew;
  }
  res.point = x;
  res.objectiveValue = f;
  res.maxInequality = maxIneq(g);
  return res;
}

// SQP first; the augmented-Lagrangian pass classifies anything SQP could
// not finish (infeasible problems in particular), and the better feasible
// point of the two is kept.
NlpResult solveAny(const NlpProblem& p, const VectorXd& x0,
                   const NlpConfig& cfg) {
  if (!cfg.sqp) return solveNlpCore(p, x0, cfg);
  NlpResult sq;
  try {
    sq = solveSqp(p, x0, cfg);
  } catch (const EvalError&) {
    sq.status = NlpStatus::EvaluationError;
  }
  if (sq.status == NlpStatus::LocalOptimum) return sq;
  NlpResult al = solveNlpCore(p, x0, cfg);
  if (sq.status == NlpStatus::EvaluationError) return al;
  const bool sqOk = sq.feasible(cfg.feasTol);
  const bool alOk =
      al.status != NlpStatus::EvaluationError && al.feasible(cfg.feasTol);
  if (sqOk && (!alOk || sq.objectiveValue <= al.objectiveValue)) return sq;
  return al;
}

}  // namespace

NlpResult solveNlp(const NlpProblem& p, const VectorXd& x0, const NlpConfig& cfg) {
  if (cfg.columnScaling && p.inequalities && p.dim > 0) {
    VectorXd s;
    try {
      const VectorXd xs = p.bounds.clamp(x0);
      const VectorXd g0 = checkedIneq(p, xs);
      if (g0.size()) {
        const MatrixXd jac = inequalityJacobian(p, xs, g0, cfg.fdStep);
        s = VectorXd::Ones(p.dim);
        for (int j = 0; j < p.dim; ++j) {
          const double n = jac.col(j).lpNorm<Eigen::Infinity>();
          if (n > 1.0) s(j) = 1.0 / std::min(n, 1e8);
        }
        if ((s.array() == 1.0).all()) s.resize(0);
      }
    } catch (const EvalError&) {
      s.resize(0);
    }
    if (s.size()) {
      NlpProblem q;
      q.dim = p.dim;
      q.numInequalities = p.numInequalities;
      q.bounds = model::Box{p.bounds.lower.cwiseQuotient(s),
                            p.bounds.upper.cwiseQuotient(s)};
      q.objective = [&p, s](const VectorXd& y) {
        return p.objective(s.cwiseProduct(y));
      };
      q.inequalities = [&p, s](const VectorXd& y) {
        return p.inequalities(s.cwiseProduct(y));
      };
      if (p.objectiveGrad)
        q.objectiveGrad = [&p, s](const VectorXd& y) {
          return VectorXd(s.cwiseProduct(p.objectiveGrad(s.cwiseProduct(y))));
        };
      if (p.inequalityJac)
        q.inequalityJac = [&p, s](const VectorXd& y) {
          return MatrixXd(p.inequalityJac(s.cwiseProduct(y)) * s.asDiagonal());
        };
      NlpResult res = solveAny(q, x0.cwiseQuotient(s), cfg);
      res.point = s.cwiseProduct(res.point);
      return res;
    }
  }
  return solveAny(p, x0, cfg);
}

NlpResult multistart(const NlpProblem& p, const MultistartConfig& ms,
                     const NlpConfig& cfg) {
  const int n = std::max(1, ms.starts);
  std::vector<VectorXd> starts;
  starts.reserve(n);
  std::mt19937_64 rng(ms.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    if (i == 0 && ms.firstStart) {
      starts.push_back(*ms.firstStart);
      continue;
    }
    VectorXd x(p.dim);
    for (int j = 0; j < p.dim; ++j)
      x(j) = p.bounds.lower(j) + unit(rng) * p.bounds.width(j);
    starts.push_back(std::move(x));
  }

  std::vector<NlpResult> results(n);
  if (ms.parallel && n > 1) {
    std::vector<std::future<NlpResult>> futs;
    futs.reserve(n);
    for (int i = 0; i < n; ++i)
      futs.push_back(std::async(std::launch::async,
                                [&p, &cfg, s = starts[i]] { return solveNlp(p, s, cfg); }));
    for (int i = 0; i < n; ++i) results[i] = futs[i].get();
  } else {
    for (int i = 0; i < n; ++i) results[i] = solveNlp(p, starts[i], cfg);
  }

  int best = -1;
  for (int i = 0; i < n; ++i) {
    if (!results[i].usable(cfg.feasTol)) continue;
    if (best < 0 || results[i].objectiveValue < results[best].objectiveValue)
      best = i;
  }
  if (best >= 0) return results[best];

  // All infeasible: report the least violated start.
  int least = 0;
  for (int i = 1; i < n; ++i) {
    if (results[i].status == NlpStatus::EvaluationError) continue;
    if (results[least].status == NlpStatus::EvaluationError ||
        results[i].maxInequality < results[least].maxInequality)
      least = i;
  }
  NlpResult out = results[least];
  if (out.status != NlpStatus::EvaluationError) out.status = NlpStatus::Infeasible;
  return out;
}

double gradientCheck(const NlpProblem& p, int points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    VectorXd x(p.dim);
    for (int j = 0; j < p.dim; ++j) {
      const double w = p.bounds.width(j);
      x(j) = p.bounds.lower(j) + (0.01 + 0.98 * unit(rng)) * w;
    }
    auto relErr = [](double a, double b) {
      return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
    };
    const double h = 1e-6;
    if (p.objectiveGrad) {
      const VectorXd ga = p.objectiveGrad(x);
      VectorXd xp = x;
      for (int j = 0; j < p.dim; ++j) {
        const double hj = h * std::max(1.0, std::abs(x(j)));
        xp(j) = x(j) + hj;
        const double fp = p.objective(xp);
        xp(j) = x(j) - hj;
        const double fm = p.objective(xp);
        xp(j) = x(j);
        worst = std::max(worst, relErr(ga(j), (fp - fm) / (2 * hj)));
      }
    }
    if (p.inequalityJac && p.inequalities) {
      const MatrixXd ja = p.inequalityJac(x);
      VectorXd xp = x;
      for (int j = 0; j < p.dim; ++j) {
        const double hj = h * std::max(1.0, std::abs(x(j)));
        xp(j) = x(j) + hj;
        const VectorXd gp = p.inequalities(xp);
        xp(j) = x(j) - hj;
        const VectorXd gm = p.inequalities(xp);
        xp(j) = x(j);
        const VectorXd fd = (gp - gm) / (2 * hj);
        for (int r = 0; r < fd.size(); ++r)
          worst = std::max(worst, relErr(ja(r, j), fd(r)));
      }
    }
  }
  return worst;
}

}  // namespace uaro::nlp
