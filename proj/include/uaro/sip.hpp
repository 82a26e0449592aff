#pragma once

#include "uaro/model.hpp"
#include "uaro/nlp.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace uaro::sip {

using Eigen::VectorXd;

/// Standard SIP: min objective(v) over the decision box subject to
/// constraint(v, w) <= 0 for every w in the scenario box.
struct SipProblem {
  int decisionDim = 0;
  model::Box decisionBox;
  std::function<double(const VectorXd&)> objective;
  std::function<VectorXd(const VectorXd&)> objectiveGrad;  // optional
  int scenarioDim = 0;
  model::Box scenarioBox;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> constraint;
};

/// Ordered scenario list; duplicates rejected within max-norm tolerance.
class ScenarioSet {
 public:
  explicit ScenarioSet(double dupTol = 1e-9) : dupTol_(dupTol) {}

  bool add(const VectorXd& w);
  int size() const { return static_cast<int>(points_.size()); }
  bool empty() const { return points_.empty(); }
  const std::vector<VectorXd>& points() const { return points_; }

 private:
  std::vector<VectorXd> points_;
  double dupTol_;
};

enum class SipStatus { Converged, Infeasible, BudgetExhausted };

const char* statusName(SipStatus s);

struct SipSolution {
  VectorXd decision;
  double objectiveValue = 0.0;
  ScenarioSet scenarios;
  double worstViolation = 0.0;
  SipStatus status = SipStatus::BudgetExhausted;
  int outerIterations = 0;
};

struct SipConfig {
  double sipTol = 1e-6;
  // Optional relative convergence tolerance: the effective threshold is
  // max(sipTol, relTol * |master objective|). Zero keeps the absolute test.
  double relTol = 0.0;
  int maxOuter = 50;
  int multistartCount = 16;
  std::uint64_t seed = 0;
  int vertexDimLimit = 6;     // include all box vertices when n_w <= limit
  int searchInnerIters = 40;  // local-ascent budget per scenario-search start
  int masterRetryStarts = 4;  // extra random starts before declaring infeasible
  nlp::NlpConfig nlp;
  std::optional<VectorXd> start;  // master warm start
  // Strict runtime witness/monotonicity checks (throw on violation). Off by
  // default: with a local master solver a later iterate may land in a better
  // basin, which looks like a monotonicity break but is legitimate. Enable
  // on problems whose masters are solved to global optimality.
  bool validate = false;
};

SipSolution solveSip(const SipProblem& p, const ScenarioSet& initialScenarios,
                     const SipConfig& cfg = {});

/// Multistart maximization of the max constraint residual over the scenario
/// box at a fixed candidate. Positive violation means violated.
std::pair<VectorXd, double> maxViolation(const SipProblem& p,
                                         const VectorXd& candidate,
                                         const SipConfig& cfg = {});

struct CertifyResult {
  bool certified = false;
  VectorXd witness;
  double violation = 0.0;
};

/// Robust-feasibility verdict for a fixed candidate, sound up to the search
/// budget (local search, not a global certificate).
CertifyResult certify(const SipProblem& p, const VectorXd& candidate,
                      const SipConfig& cfg = {});

}  // namespace uaro::sip
