#pragma once

#include <Eigen/Core>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace uaro::model {

using Eigen::VectorXd;

/// Componentwise box [lower, upper].
struct Box {
  VectorXd lower;
  VectorXd upper;

  Box() = default;
  Box(VectorXd lo, VectorXd up);
  static Box uniform(int dim, double lo, double up);

  int dim() const { return static_cast<int>(lower.size()); }
  bool contains(const VectorXd& p, double tol = 0.0) const;
  VectorXd clamp(const VectorXd& p) const;
  VectorXd center() const { return 0.5 * (lower + upper); }
  double width(int i) const { return upper(i) - lower(i); }
  /// All 2^dim corner points, lexicographic in (lo, up) per component.
  std::vector<VectorXd> vertices() const;
};

/// Thrown when a model callback produces a non-finite value.
class ModelError : public std::runtime_error {
 public:
  ModelError(const std::string& what, int timeIndex)
      : std::runtime_error(what), k(timeIndex) {}
  int k;
};

/// Full-horizon trajectory: states 0..N, controls and disturbances 0..N-1.
struct Trajectory {
  std::vector<VectorXd> states;
  std::vector<VectorXd> controls;
  std::vector<VectorXd> disturbances;
};

/// Realized prefix z_k: states x_0..x_k, controls u_0..u_{k-1},
/// disturbances w_0..w_{k-1}.
struct History {
  std::vector<VectorXd> states;
  std::vector<VectorXd> controls;
  std::vector<VectorXd> disturbances;

  int step() const { return static_cast<int>(states.size()) - 1; }
  const VectorXd& currentState() const { return states.back(); }
  bool consistent() const;
};

History extend(const History& h, const VectorXd& u, const VectorXd& w,
               const VectorXd& xNext);
Trajectory toTrajectory(const History& h);

/// Discrete-time system over a fixed horizon. Immutable after construction;
/// all callbacks are pure.
struct SystemModel {
  std::string name;
  int N = 0;
  int n_x = 0, n_u = 0, n_w = 0;
  VectorXd initialState;
  Box controlBox;
  Box disturbBox;

  /// x_{k+1} = step(k, x_k, u_k, w_k), 0 <= k < N.
  std::function<VectorXd(int, const VectorXd&, const VectorXd&, const VectorXd&)> stepFn;
  /// Path constraint rows at state index k (1..N); residuals <= 0 iff
  /// satisfied. May return an empty vector.
  std::function<VectorXd(int, const VectorXd&)> pathConstraint;
  /// Extra rows at index N; may be null.
  std::function<VectorXd(const VectorXd&)> terminalConstraint;
  /// Scalar cost over the full trajectory.
  std::function<double(const Trajectory&)> cost;
};

VectorXd step(const SystemModel& m, int k, const VectorXd& x, const VectorXd& u,
              const VectorXd& w);
Trajectory rollout(const SystemModel& m, const std::vector<VectorXd>& controls,
                   const std::vector<VectorXd>& disturbances);
/// Residual vectors at state indices 1..N (terminal rows appended at N).
std::vector<VectorXd> evalConstraints(const SystemModel& m, const Trajectory& t);
double evalCost(const SystemModel& m, const Trajectory& t);

/// Path rows at index k, with terminal rows appended when k == N.
VectorXd constraintAt(const SystemModel& m, int k, const VectorXd& x);

/// Planar quadrotor, explicit midpoint discretization, T_s = 0.5, N = 5.
/// State [r, rdot, s, sdot, psi, psidot]; controls are the two motor
/// thrusts in [-2, 2]; scalar torque disturbance in [-wmax, wmax].
SystemModel buildQuadrotor(double c, double wmax);

/// Scalar chain x_{k+1} = x_k + u_k + w_k, N = 2, |x_k| <= 2, J = x_2^2.
SystemModel buildToyIntegrator();
/// Same dynamics, W = [-0.3, 0.3], terminal |x_2| <= 0.4, J = x_2^2.
SystemModel buildToyFeas();

}  // namespace uaro::model
