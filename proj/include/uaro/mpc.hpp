#pragma once

#include "uaro/model.hpp"
#include "uaro/nested.hpp"
#include "uaro/sip.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace uaro::mpc {

using Eigen::VectorXd;
using model::History;

/// How the simulator realizes w_k at each step.
enum class SourceMode { SeededRandom, FixedSequence, AdversarialReplay };

struct DisturbanceSource {
  SourceMode mode = SourceMode::SeededRandom;
  std::uint64_t seed = 0;
  std::vector<VectorXd> sequence;  // used by FixedSequence

  static DisturbanceSource seededRandom(std::uint64_t seed);
  static DisturbanceSource fixed(std::vector<VectorXd> seq);
  /// Fixed all-zero sequence of the model's horizon length.
  static DisturbanceSource zero(const model::SystemModel& m);
  static DisturbanceSource adversarial(std::uint64_t seed = 0);
};

/// w_k for the current step; always inside the disturbance box. For
/// AdversarialReplay the box vertex with the worst next-step residual wins.
VectorXd drawDisturbance(const model::SystemModel& m,
                         const DisturbanceSource& src, int k,
                         const History& hist, const VectorXd& control);

enum class RunStatus { Ok, ProblemInfeasible, SolverFailure };
const char* statusName(RunStatus s);

struct StepRecord {
  int k = 0;
  double gamma = 0.0;
  VectorXd control;
  VectorXd disturbance;
  VectorXd nextState;
  long nodeSolves = 0;
  double wallMs = 0.0;
};

struct MpcTrace {
  std::vector<StepRecord> steps;
  RunStatus status = RunStatus::Ok;
  int failStep = -1;
  std::string message;
  double realizedCost = 0.0;  // valid when status == Ok
  History history;            // realized closed-loop prefix

  bool complete() const { return status == RunStatus::Ok; }
  double initialBound() const { return steps.front().gamma; }
  double initialGap() const { return initialBound() - realizedCost; }
};

struct MpcConfig {
  nested::NestedConfig nested;
  sip::SipConfig roSip;          // flat open-loop solves
  bool roResolveEveryStep = true;
  int threads = 0;               // 0 = hardware concurrency
};

/// Update-aware driver: per step, solve the nested root at the realized
/// prefix, apply the first control, observe w_k, extend the prefix.
MpcTrace runUaroMpc(const model::SystemModel& m, const DisturbanceSource& src,
                    const MpcConfig& cfg = {});
/// Same, reusing an external solver so its memo and step-0 solution cache
/// carry across sequential runs.
MpcTrace runUaroMpc(const model::SystemModel& m, const DisturbanceSource& src,
                    const MpcConfig& cfg, nested::NestedSolver& solver);

/// Open-loop robust baseline: per step, solve the flat SIP over the whole
/// remaining control sequence against the whole remaining disturbance
/// sequence, apply only the first input.
MpcTrace runRoMpc(const model::SystemModel& m, const DisturbanceSource& src,
                  const MpcConfig& cfg = {});

enum class Driver { Uaro, Ro };
const char* driverName(Driver d);

struct Stats {
  double mean = 0.0, min = 0.0, max = 0.0;
};

struct MonteCarloSummary {
  Driver driver = Driver::Uaro;
  int runs = 0;
  int completed = 0;
  int problemInfeasible = 0;
  int solverFailures = 0;
  Stats negCost;     // -J over completed runs
  Stats initialGap;  // gamma_0 - J over completed runs
  double meanGamma0 = 0.0;
  std::vector<double> meanGamma, minGamma, maxGamma;  // per step k
  double wallMs = 0.0;
  std::vector<MpcTrace> traces;  // run index order
};

/// Independent seeded runs (run i reseeds a SeededRandom source with a mix of
/// `seed` and i), executed concurrently, aggregated deterministically.
MonteCarloSummary monteCarlo(const model::SystemModel& m, Driver driver,
                             int runs, std::uint64_t seed,
                             const MpcConfig& cfg = {});

/// Aggregate already-produced traces into the Monte Carlo summary shape.
MonteCarloSummary summarize(const model::SystemModel& m, Driver driver,
                            std::vector<MpcTrace> traces, double wallMs = 0.0);

}  // namespace uaro::mpc
