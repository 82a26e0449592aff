#pragma once

#include "uaro/model.hpp"

#include <limits>
#include <map>
#include <vector>

namespace uaro::oracle {

using Eigen::VectorXd;

/// Grid layout for exhaustive tree evaluation. Per-dimension point counts
/// always include the box endpoints.
struct GridSpec {
  int controlPoints = 41;
  int disturbancePoints = 5;
  double stateRound = 1e-9;
  long nodeBudget = 10'000'000;
};

constexpr double kInfeasible = std::numeric_limits<double>::infinity();

struct DpResult {
  double value = kInfeasible;  // +inf when no feasible policy/sequence exists
  VectorXd rootControl;        // valid when value is finite
  bool feasible() const { return std::isfinite(value); }
};

/// Exhaustive min-max value with per-step re-decision:
/// min_u0 max_w0 ... min_u{N-1} max_w{N-1} J, violations mapped to +inf.
/// Also usable as a tabulated policy via `policyControl`.
class ClosedLoopDp {
 public:
  ClosedLoopDp(const model::SystemModel& m, GridSpec grid);

  DpResult solve();
  /// Optimal gridded control at (k, state); solves on demand.
  VectorXd policyControl(int k, const model::History& hist);

 private:
  friend DpResult dpClosedLoop(const model::SystemModel&, const GridSpec&);
  double valueFrom(int k, model::History& hist, VectorXd* bestControl);
  const model::SystemModel& m_;
  GridSpec grid_;
  std::vector<VectorXd> uGrid_, wGrid_;  // flattened product grids
  long nodes_ = 0;
};

DpResult dpClosedLoop(const model::SystemModel& m, const GridSpec& grid = {});

/// Exhaustive open-loop value: min over whole-sequence control grids of the
/// max over disturbance grids, +inf when every sequence is violated.
DpResult dpOpenLoop(const model::SystemModel& m, const GridSpec& grid = {});

/// Grid-exhaustive membership in the open-loop feasible set: the suffix
/// satisfies every constraint for all gridded disturbance suffixes.
bool memberUbar(const model::SystemModel& m, int k, const model::History& hist,
                const std::vector<VectorXd>& controlSuffix,
                const GridSpec& grid = {});

/// Grid-exhaustive membership in the update-aware feasible set: for all
/// gridded w_k the constraint at k+1 holds and a feasible continuation
/// exists recursively.
bool memberUstar(const model::SystemModel& m, int k, const model::History& hist,
                 const VectorXd& control, const GridSpec& grid = {});

/// Cartesian grid over a box, `points` per dimension, endpoints included.
std::vector<VectorXd> boxGrid(const model::Box& box, int points);

}  // namespace uaro::oracle
