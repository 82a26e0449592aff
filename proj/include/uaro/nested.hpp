#pragma once

#include "uaro/model.hpp"
#include "uaro/nlp.hpp"
#include "uaro/sip.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

namespace uaro::nested {

using Eigen::VectorXd;

/// Solver position: level j with the realized prefix up to j.
struct NodeContext {
  const model::SystemModel* model = nullptr;
  int level = 0;
  model::History history;
  // Upper bound imposed on the node's certified bound, typically the previous
  // closed-loop step's gamma: the optimum can only improve once a disturbance
  // is realized, so the cap never cuts it off, and the scenario search then
  // certifies the capped value directly.
  double boundCap = std::numeric_limits<double>::infinity();

  bool valid() const {
    return model && history.consistent() && history.step() == level &&
           level >= 0 && level < model->N;
  }
};

/// Finite nested optimal value, or -inf when the continuation is infeasible.
struct ExtendedValue {
  double value = 0.0;
  bool feasible = false;

  static ExtendedValue finite(double v) { return {v, true}; }
  static ExtendedValue negInf() { return {0.0, false}; }
};

/// Nonnegative weights summing to one.
struct SimplexWeights {
  VectorXd lambda;
  explicit SimplexWeights(VectorXd l);
};

/// lambda-weighted combination of disjunct residuals.
double smoothedDisjunction(const VectorXd& terms, const SimplexWeights& w);
/// Exact minimum of the weighted combination over the simplex (a vertex).
double simplexMinimum(const VectorXd& terms);

enum class NestedStatus { Converged, Infeasible, BudgetExhausted };
const char* statusName(NestedStatus s);

struct NestedSolution {
  VectorXd control;     // first-step control at the node's level
  double bound = 0.0;   // gamma at the root, delta at inner nodes
  NestedStatus status = NestedStatus::BudgetExhausted;
  std::vector<sip::ScenarioSet> scenariosByLevel;  // [0] = node's own level
  long nodeSolves = 0;
  int outerIterations = 0;
};

struct NestedConfig {
  double sipTol = 1e-6;
  // Convergence threshold scales with the bound magnitude:
  // tol(b) = max(sipTol, relTol * |b|). Keeps scenario generation from
  // chasing violations far below the master NLP's practical accuracy.
  double relTol = 5e-4;
  int maxOuter = 30;
  double epsilon = 1e-6;        // strictness margin in the smoothed disjunction
  double deltaLo = -1e4;        // bound box for gamma/delta decisions
  double deltaHi = 1e4;
  double negInfViolation = 1e9; // violation assigned to infeasible continuations
  int scenarioCandidates = 2;   // seeded candidates beyond vertices + nominal
  int refineIters = 0;          // coordinate-search refinement of the witness
  int masterRetryStarts = 4;
  std::uint64_t seed = 0;
  double memoRound = 1e-9;
  bool useMemo = true;
  bool validate = true;
  nlp::NlpConfig nlp;
};

/// Recursive solver for the decreasing-horizon min-max stack. Masters with
/// fixed scenario sets are solved as one tree-structured NLP over all
/// remaining re-decisions (the nested minimizations commute), and scenario
/// generation evaluates the continuation value recursively.
class NestedSolver {
 public:
  explicit NestedSolver(const model::SystemModel& m, NestedConfig cfg = {});
  ~NestedSolver();

  /// Node solve at any level; dispatches to the terminal flat SIP at N-1.
  NestedSolution solveNode(const NodeContext& ctx);
  /// Flat SIP over (v, delta) at the last decision level.
  NestedSolution solveTerminal(const NodeContext& ctx);
  /// Memoized extended-value wrapper around solveNode.
  ExtendedValue evalPTilde(const NodeContext& ctx);
  /// Worst constraint-violation witness for a candidate (control, bound).
  std::pair<VectorXd, double> scenarioGen(const NodeContext& ctx,
                                          const VectorXd& control, double bound);
  /// Violation of one candidate scenario computed through the disjunctive
  /// smoothing route instead of direct continuation evaluation.
  double scenarioGenSmoothedViolation(const NodeContext& ctx,
                                      const VectorXd& control, double bound,
                                      const VectorXd& omega);

  long nodeSolves() const { return nodeSolves_; }
  const std::vector<long>& solvesPerLevel() const { return solvesPerLevel_; }
  void resetCounters();

  const NestedConfig& config() const { return cfg_; }

 private:
  struct TreeNode;
  struct Sub;
  struct Layout;

  // needControl = false allows a memo hit to satisfy the call (bound only).
  Sub solveRec(int level, const model::History& hist, TreeNode& tree,
               bool needControl = false);
  using MemoKey = std::pair<int, std::vector<long long>>;
  MemoKey memoKey(int level, const model::History& hist) const;
  Sub solveInner(int level, const model::History& hist, TreeNode& tree);
  Sub solveTerminalNode(const model::History& hist, TreeNode& tree);
  // warmChain, when given, holds branch controls for levels `level+1` onward
  // (continuation solves for nearby scenarios start from the incumbent branch
  // plan instead of a cold box center, which on nonconvex models can wander
  // into a far worse basin and report a spurious violation).
  std::pair<VectorXd, double> searchScenario(int level,
                                             const model::History& hist,
                                             const VectorXd& control,
                                             double bound,
                                             const std::vector<VectorXd>* warmChain = nullptr);
  double candidateViolation(int level, const model::History& hist,
                            const VectorXd& control, double bound,
                            const VectorXd& omega,
                            const std::vector<VectorXd>* warmChain = nullptr);
  ExtendedValue continuationValue(int level, const model::History& hist,
                                  const std::vector<VectorXd>* warmChain = nullptr);
  void seedNominal(TreeNode& tree, int level);
  std::unique_ptr<TreeNode> makeChain(int level, const TreeNode* sibling) const;
  static void collectLayout(TreeNode& n, int level, int lastLevel, int n_u,
                            Layout& L);
  void gatherScenarios(const TreeNode& tree, int depth,
                       std::vector<sip::ScenarioSet>& out) const;

  double deltaHiAt(int level) const;

  const model::SystemModel& m_;
  NestedConfig cfg_;
  int rootLevel_ = 0;
  double boundCap_ = std::numeric_limits<double>::infinity();
  // Nominal-branch controls of the last solveNode solution (levels
  // planWarmRoot_ .. N-1), used to warm-start the next consecutive level.
  std::vector<VectorXd> planWarm_;
  int planWarmRoot_ = -1;
  double planWarmDelta_ = 0.0;
  // Full node solutions keyed like the memo; deterministic solves at an
  // identical prefix (e.g. step 0 of every Monte Carlo run) are served back.
  struct CachedSolution {
    NestedSolution sol;
    std::vector<VectorXd> plan;
    double planDelta = 0.0;
  };
  std::map<MemoKey, CachedSolution> solCache_;
  long nodeSolves_ = 0;
  std::uint64_t searchCalls_ = 0;
  std::vector<long> solvesPerLevel_;
  std::map<std::pair<int, std::vector<long long>>, ExtendedValue> memo_;
  std::mutex memoMutex_;
};

/// Minimum over (omega, lambda) of the lambda-weighted disjunct residuals;
/// the simplex minimum is attained at a vertex, so this equals the minimum
/// over omega of the smallest residual.
double smoothedConstraintMin(
    const std::function<VectorXd(const VectorXd&)>& residuals,
    const model::Box& omegaBox, const NestedConfig& cfg);

}  // namespace uaro::nested
