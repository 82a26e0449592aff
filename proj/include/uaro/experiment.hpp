#pragma once

#include "uaro/model.hpp"
#include "uaro/mpc.hpp"

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

namespace uaro::experiment {

/// Configuration-file problem with the offending location attached.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line, std::string field = {})
      : std::runtime_error(what), line(line), field(std::move(field)) {}
  int line;
  std::string field;
};

struct ExperimentConfig {
  std::string system = "quadrotor";  // quadrotor | toy-integrator | toy-feas
  double c = 1.0;
  double wmax = 0.001;
  std::string controller = "both";  // uaro | ro | both
  int runs = 20;
  std::uint64_t seed = 0;
  int horizon = 0;  // 0 = model default
  bool zeroDisturbance = false;

  double sipTol = 1e-6;
  double epsilon = 1e-6;
  int maxOuter = 30;
  int multistart = 16;
  int scenarioCandidates = 2;
  int refineIters = 0;
  int threads = 0;

  std::string outDir = ".";
};

/// Flat key = value text; '#' and ';' start comments; unknown keys rejected.
ExperimentConfig parseConfig(std::istream& in);
ExperimentConfig parseConfigFile(const std::string& path);
/// One "key=value" override applied on top of a parsed config.
void applyOverride(ExperimentConfig& cfg, const std::string& keyValue);

model::SystemModel buildSystem(const ExperimentConfig& cfg);
mpc::MpcConfig solverConfig(const ExperimentConfig& cfg);

/// Full batch for one controller, honoring zero-disturbance mode.
mpc::MonteCarloSummary runBatch(const model::SystemModel& m,
                                mpc::Driver driver,
                                const ExperimentConfig& cfg);

void writeTraceCsv(std::ostream& out, const mpc::MonteCarloSummary& s);
void writeGammaCsv(std::ostream& out, const mpc::MonteCarloSummary& s);
/// Deterministic metric/value rows; wall time isolated in its own column.
void writeSummaryCsv(std::ostream& out, const mpc::MonteCarloSummary& s);

/// Exit codes: 0 ok, 1 config error, 2 problem infeasible, 3 solver failure.
int cmdRun(const ExperimentConfig& cfg, std::ostream& log);
int cmdCompare(const std::string& pathA, const std::string& pathB,
               std::ostream& out);
int cmdCertify(const ExperimentConfig& cfg, const std::string& controlsPath,
               std::ostream& out);

/// metric -> value text from a summary CSV (wall column ignored).
std::map<std::string, std::string> readSummaryCsv(const std::string& path);

}  // namespace uaro::experiment
