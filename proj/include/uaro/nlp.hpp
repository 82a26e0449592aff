#pragma once

#include "uaro/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>

namespace uaro::nlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Smooth box-constrained NLP with inequality constraints:
///   min f(x)  s.t.  g(x) <= 0,  lower <= x <= upper.
struct NlpProblem {
  int dim = 0;
  std::function<double(const VectorXd&)> objective;
  std::function<VectorXd(const VectorXd&)> inequalities;  // null => none
  int numInequalities = 0;
  model::Box bounds;

  // Optional analytic derivatives; finite differences otherwise.
  std::function<VectorXd(const VectorXd&)> objectiveGrad;
  std::function<MatrixXd(const VectorXd&)> inequalityJac;
};

enum class NlpStatus { LocalOptimum, Infeasible, IterationLimit, EvaluationError };

const char* statusName(NlpStatus s);

struct NlpResult {
  VectorXd point;
  double objectiveValue = 0.0;
  double maxInequality = 0.0;
  NlpStatus status = NlpStatus::EvaluationError;
  int iterations = 0;

  bool feasible(double tol) const { return maxInequality <= tol; }
  bool usable(double tol) const {
    return status != NlpStatus::EvaluationError && feasible(tol);
  }
};

struct NlpConfig {
  double feasTol = 1e-6;
  double statTol = 1e-6;
  int maxOuter = 200;
  int maxInner = 500;
  double fdStep = 1e-6;  // relative forward-difference step
  double mu0 = 10.0;
  double muGrowth = 10.0;
  double muMax = 1e10;
  // Rescale variables by inverse constraint-Jacobian column norms at the
  // start point. Equalizes sensitivities when some variables act through a
  // much stiffer channel than others (projected-gradient steps otherwise
  // stall on the ill-conditioned directions).
  bool columnScaling = true;
  // SQP front end: damped-BFGS quadratic models with an ADMM QP subsolver
  // and an l1-merit line search. Falls back to the augmented-Lagrangian
  // solver when it fails to reach a feasible stationary point; shooting
  // formulations with long nonlinear horizons need the curvature model.
  bool sqp = true;
  int sqpMaxIter = 200;
  int qpMaxIter = 4000;
};

/// Augmented-Lagrangian outer loop with a spectral projected-gradient inner
/// minimization. Deterministic for fixed inputs.
NlpResult solveNlp(const NlpProblem& p, const VectorXd& x0,
                   const NlpConfig& cfg = {});

struct MultistartConfig {
  int starts = 8;
  std::uint64_t seed = 0;
  bool parallel = false;
  std::optional<VectorXd> firstStart;  // used as start index 0 when set
};

/// Best feasible result across seeded uniform starts; ties broken by lowest
/// start index. Returns Infeasible only if every start is infeasible.
NlpResult multistart(const NlpProblem& p, const MultistartConfig& ms,
                     const NlpConfig& cfg = {});

/// Max relative mismatch between analytic gradients and central differences
/// at `points` seeded random interior points.
double gradientCheck(const NlpProblem& p, int points, std::uint64_t seed);

}  // namespace uaro::nlp
