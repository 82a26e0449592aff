#include "uaro/experiment.hpp"

#include "uaro/sip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

namespace uaro::experiment {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

double parseDouble(const std::string& v, int line, const std::string& key) {
  try {
    std::size_t at = 0;
    const double d = std::stod(v, &at);
    if (at != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid numeric value '" + v + "' for " + key, line, key);
  }
}

long long parseInt(const std::string& v, int line, const std::string& key) {
  try {
    std::size_t at = 0;
    const long long d = std::stoll(v, &at);
    if (at != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer value '" + v + "' for " + key, line, key);
  }
}

bool parseBool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean value '" + v + "' for " + key, line, key);
}

void applyKey(ExperimentConfig& cfg, const std::string& key,
              const std::string& value, int line) {
  if (key == "system") {
    if (value != "quadrotor" && value != "toy-integrator" && value != "toy-feas")
      throw ConfigError("unknown system '" + value + "'", line, key);
    cfg.system = value;
  } else if (key == "c") {
    cfg.c = parseDouble(value, line, key);
    if (!(cfg.c > 0)) throw ConfigError("c must be > 0", line, key);
  } else if (key == "wmax") {
    cfg.wmax = parseDouble(value, line, key);
    if (!(cfg.wmax >= 0)) throw ConfigError("wmax must be >= 0", line, key);
  } else if (key == "controller") {
    if (value != "uaro" && value != "ro" && value != "both")
      throw ConfigError("controller must be uaro, ro or both", line, key);
    cfg.controller = value;
  } else if (key == "runs") {
    cfg.runs = static_cast<int>(parseInt(value, line, key));
    if (cfg.runs < 1) throw ConfigError("runs must be >= 1", line, key);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parseInt(value, line, key));
  } else if (key == "horizon") {
    cfg.horizon = static_cast<int>(parseInt(value, line, key));
    if (cfg.horizon < 0) throw ConfigError("horizon must be >= 0", line, key);
  } else if (key == "zero_disturbance") {
    cfg.zeroDisturbance = parseBool(value, line, key);
  } else if (key == "sip_tol") {
    cfg.sipTol = parseDouble(value, line, key);
    if (!(cfg.sipTol > 0)) throw ConfigError("sip_tol must be > 0", line, key);
  } else if (key == "epsilon") {
    cfg.epsilon = parseDouble(value, line, key);
    if (!(cfg.epsilon > 0)) throw ConfigError("epsilon must be > 0", line, key);
  } else if (key == "max_outer") {
    cfg.maxOuter = static_cast<int>(parseInt(value, line, key));
    if (cfg.maxOuter < 1) throw ConfigError("max_outer must be >= 1", line, key);
  } else if (key == "multistart") {
    cfg.multistart = static_cast<int>(parseInt(value, line, key));
    if (cfg.multistart < 1) throw ConfigError("multistart must be >= 1", line, key);
  } else if (key == "scenario_candidates") {
    cfg.scenarioCandidates = static_cast<int>(parseInt(value, line, key));
    if (cfg.scenarioCandidates < 0)
      throw ConfigError("scenario_candidates must be >= 0", line, key);
  } else if (key == "refine_iters") {
    cfg.refineIters = static_cast<int>(parseInt(value, line, key));
    if (cfg.refineIters < 0)
      throw ConfigError("refine_iters must be >= 0", line, key);
  } else if (key == "threads") {
    cfg.threads = static_cast<int>(parseInt(value, line, key));
    if (cfg.threads < 0) throw ConfigError("threads must be >= 0", line, key);
  } else if (key == "out_dir") {
    if (value.empty()) throw ConfigError("out_dir must not be empty", line, key);
    cfg.outDir = value;
  } else {
    throw ConfigError("unknown key '" + key + "'", line, key);
  }
}

}  // namespace

ExperimentConfig parseConfig(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value", lineNo);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key", lineNo);
    applyKey(cfg, key, value, lineNo);
  }
  return cfg;
}

ExperimentConfig parseConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path, 0);
  return parseConfig(in);
}

void applyOverride(ExperimentConfig& cfg, const std::string& keyValue) {
  const auto eq = keyValue.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key=value: " + keyValue, 0);
  applyKey(cfg, trim(keyValue.substr(0, eq)), trim(keyValue.substr(eq + 1)), 0);
}

model::SystemModel buildSystem(const ExperimentConfig& cfg) {
  model::SystemModel m;
  if (cfg.system == "quadrotor") {
    m = model::buildQuadrotor(cfg.c, cfg.wmax);
  } else if (cfg.system == "toy-integrator") {
    m = model::buildToyIntegrator();
  } else {
    m = model::buildToyFeas();
  }
  if (cfg.horizon > 0) {
    if (cfg.horizon > m.N)
      throw ConfigError("horizon exceeds model horizon " + std::to_string(m.N),
                        0, "horizon");
    m.N = cfg.horizon;
  }
  return m;
}

mpc::MpcConfig solverConfig(const ExperimentConfig& cfg) {
  mpc::MpcConfig c;
  c.nested.sipTol = cfg.sipTol;
  c.nested.epsilon = cfg.epsilon;
  c.nested.maxOuter = cfg.maxOuter;
  c.nested.scenarioCandidates = cfg.scenarioCandidates;
  c.nested.refineIters = cfg.refineIters;
  c.nested.seed = cfg.seed;
  c.roSip.sipTol = cfg.sipTol;
  c.roSip.relTol = c.nested.relTol;
  c.roSip.maxOuter = cfg.maxOuter;
  c.roSip.multistartCount = cfg.multistart;
  c.roSip.seed = cfg.seed;
  c.threads = cfg.threads;
  return c;
}

mpc::MonteCarloSummary runBatch(const model::SystemModel& m,
                                mpc::Driver driver,
                                const ExperimentConfig& cfg) {
  const mpc::MpcConfig mc = solverConfig(cfg);
  if (!cfg.zeroDisturbance)
    return mpc::monteCarlo(m, driver, cfg.runs, cfg.seed, mc);

  // All runs are identical under the zero source; run once, replicate.
  const auto src = mpc::DisturbanceSource::zero(m);
  const mpc::MpcTrace one = driver == mpc::Driver::Uaro
                                ? mpc::runUaroMpc(m, src, mc)
                                : mpc::runRoMpc(m, src, mc);
  double wall = 0.0;
  for (const auto& s : one.steps) wall += s.wallMs;
  return mpc::summarize(m, driver,
                        std::vector<mpc::MpcTrace>(cfg.runs, one), wall);
}

void writeTraceCsv(std::ostream& out, const mpc::MonteCarloSummary& s) {
  int n_u = 0, n_w = 0, n_x = 0;
  for (const auto& t : s.traces) {
    if (!t.steps.empty()) {
      n_u = static_cast<int>(t.steps[0].control.size());
      n_w = static_cast<int>(t.steps[0].disturbance.size());
      n_x = static_cast<int>(t.steps[0].nextState.size());
      break;
    }
  }
  out << "run,k,gamma";
  for (int i = 0; i < n_u; ++i) out << ",u" << i;
  for (int i = 0; i < n_w; ++i) out << ",w" << i;
  for (int i = 0; i < n_x; ++i) out << ",x_next" << i;
  out << ",node_solves,step_wall_ms\n";
  for (std::size_t r = 0; r < s.traces.size(); ++r) {
    for (const auto& st : s.traces[r].steps) {
      out << r << ',' << st.k << ',' << num(st.gamma);
      for (int i = 0; i < n_u; ++i) out << ',' << num(st.control(i));
      for (int i = 0; i < n_w; ++i) out << ',' << num(st.disturbance(i));
      for (int i = 0; i < n_x; ++i) out << ',' << num(st.nextState(i));
      out << ',' << st.nodeSolves << ',' << num(st.wallMs) << '\n';
    }
  }
}

void writeGammaCsv(std::ostream& out, const mpc::MonteCarloSummary& s) {
  out << "k,mean_gamma,min_gamma,max_gamma\n";
  for (std::size_t k = 0; k < s.meanGamma.size(); ++k) {
    if (!std::isfinite(s.minGamma[k])) continue;  // no completed run reached k
    out << k << ',' << num(s.meanGamma[k]) << ',' << num(s.minGamma[k]) << ','
        << num(s.maxGamma[k]) << '\n';
  }
}

void writeSummaryCsv(std::ostream& out, const mpc::MonteCarloSummary& s) {
  out << "metric,value,wall_ms\n";
  out << "controller," << driverName(s.driver) << ",\n";
  out << "runs," << s.runs << ",\n";
  out << "completed," << s.completed << ",\n";
  out << "problem_infeasible," << s.problemInfeasible << ",\n";
  out << "solver_failures," << s.solverFailures << ",\n";
  if (s.completed > 0) {
    out << "mean_neg_cost," << num(s.negCost.mean) << ",\n";
    out << "min_neg_cost," << num(s.negCost.min) << ",\n";
    out << "max_neg_cost," << num(s.negCost.max) << ",\n";
    out << "mean_gap," << num(s.initialGap.mean) << ",\n";
    out << "min_gap," << num(s.initialGap.min) << ",\n";
    out << "max_gap," << num(s.initialGap.max) << ",\n";
    out << "mean_gamma0," << num(s.meanGamma0) << ",\n";
  }
  out << "wall,," << num(s.wallMs) << '\n';
}

std::map<std::string, std::string> readSummaryCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open summary file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  if (!std::getline(in, line) || trim(line) != "metric,value,wall_ms")
    throw std::runtime_error("not a summary file (bad header): " + path);
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    if (c1 == std::string::npos)
      throw std::runtime_error("malformed summary row: " + line);
    const auto c2 = line.find(',', c1 + 1);
    const std::string key = line.substr(0, c1);
    const std::string value = c2 == std::string::npos
                                  ? line.substr(c1 + 1)
                                  : line.substr(c1 + 1, c2 - c1 - 1);
    if (key == "wall") continue;
    out[key] = value;
  }
  return out;
}

namespace {

int batchExitCode(const mpc::MonteCarloSummary& s, std::ostream& log) {
  if (s.completed == s.runs) return 0;
  if (s.problemInfeasible > 0) {
    for (const auto& t : s.traces) {
      if (t.status == mpc::RunStatus::ProblemInfeasible) {
        log << driverName(s.driver) << ": infeasible at k = " << t.failStep
            << " (" << t.message << ")\n";
        break;
      }
    }
    return 2;
  }
  log << driverName(s.driver) << ": " << s.solverFailures
      << " run(s) hit a solver failure\n";
  return 3;
}

void writeArtifacts(const std::string& dir, const mpc::MonteCarloSummary& s,
                    std::ostream& log) {
  const std::string base = dir + "/" + driverName(s.driver);
  {
    std::ofstream f(base + "_trace.csv");
    writeTraceCsv(f, s);
  }
  {
    std::ofstream f(base + "_gamma.csv");
    writeGammaCsv(f, s);
  }
  {
    std::ofstream f(base + "_summary.csv");
    writeSummaryCsv(f, s);
  }
  log << "wrote " << base << "_{trace,gamma,summary}.csv\n";
}

}  // namespace

int cmdRun(const ExperimentConfig& cfg, std::ostream& log) {
  const model::SystemModel m = buildSystem(cfg);
  std::filesystem::create_directories(cfg.outDir);

  std::vector<mpc::Driver> drivers;
  if (cfg.controller == "uaro" || cfg.controller == "both")
    drivers.push_back(mpc::Driver::Uaro);
  if (cfg.controller == "ro" || cfg.controller == "both")
    drivers.push_back(mpc::Driver::Ro);

  int code = 0;
  for (const mpc::Driver d : drivers) {
    log << m.name << ": running " << cfg.runs << " " << driverName(d)
        << " run(s)\n";
    const mpc::MonteCarloSummary s = runBatch(m, d, cfg);
    writeArtifacts(cfg.outDir, s, log);
    log << driverName(d) << ": completed " << s.completed << "/" << s.runs;
    if (s.completed > 0)
      log << ", mean -J = " << num(s.negCost.mean)
          << ", mean gamma0 = " << num(s.meanGamma0);
    log << "\n";
    code = std::max(code, batchExitCode(s, log));
  }
  return code;
}

int cmdCompare(const std::string& pathA, const std::string& pathB,
               std::ostream& out) {
  const auto a = readSummaryCsv(pathA);
  const auto b = readSummaryCsv(pathB);
  auto keys = [](const std::map<std::string, std::string>& m) {
    std::vector<std::string> k;
    for (const auto& [key, _] : m) k.push_back(key);
    return k;
  };
  if (keys(a) != keys(b)) {
    out << "summary schemas differ between " << pathA << " and " << pathB
        << "\n";
    return 1;
  }
  out << "metric,a,b,diff,ratio\n";
  for (const auto& [key, va] : a) {
    const std::string& vb = b.at(key);
    out << key << ',' << va << ',' << vb;
    char* endA = nullptr;
    char* endB = nullptr;
    const double da = std::strtod(va.c_str(), &endA);
    const double db = std::strtod(vb.c_str(), &endB);
    const bool numeric = endA && *endA == '\0' && !va.empty() && endB &&
                         *endB == '\0' && !vb.empty();
    if (numeric) {
      out << ',' << num(da - db)
          << ',' << (db != 0.0 ? num(da / db) : "");
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return 0;
}

int cmdCertify(const ExperimentConfig& cfg, const std::string& controlsPath,
               std::ostream& out) {
  const model::SystemModel m = buildSystem(cfg);

  std::ifstream in(controlsPath);
  if (!in) {
    out << "cannot open controls file: " << controlsPath << "\n";
    return 1;
  }
  std::vector<double> vals;
  std::string tok;
  while (in >> tok) {
    std::replace(tok.begin(), tok.end(), ',', ' ');
    std::istringstream ss(tok);
    double v;
    while (ss >> v) vals.push_back(v);
  }
  if (static_cast<int>(vals.size()) != m.N * m.n_u) {
    out << "controls file has " << vals.size() << " values, expected "
        << m.N * m.n_u << " (" << m.N << " x " << m.n_u << ")\n";
    return 1;
  }

  // Robust feasibility of the fixed whole-horizon sequence: every path and
  // terminal row under every stacked disturbance sequence.
  sip::SipProblem p;
  p.decisionDim = m.N * m.n_u;
  {
    Eigen::VectorXd lo(p.decisionDim), hi(p.decisionDim);
    for (int i = 0; i < m.N; ++i) {
      lo.segment(i * m.n_u, m.n_u) = m.controlBox.lower;
      hi.segment(i * m.n_u, m.n_u) = m.controlBox.upper;
    }
    p.decisionBox = model::Box(lo, hi);
  }
  p.objective = [](const Eigen::VectorXd&) { return 0.0; };
  p.scenarioDim = m.N * m.n_w;
  {
    Eigen::VectorXd lo(p.scenarioDim), hi(p.scenarioDim);
    for (int i = 0; i < m.N; ++i) {
      lo.segment(i * m.n_w, m.n_w) = m.disturbBox.lower;
      hi.segment(i * m.n_w, m.n_w) = m.disturbBox.upper;
    }
    p.scenarioBox = model::Box(lo, hi);
  }
  p.constraint = [&m](const Eigen::VectorXd& vd, const Eigen::VectorXd& ws) {
    std::vector<Eigen::VectorXd> controls(m.N), dists(m.N);
    for (int i = 0; i < m.N; ++i) {
      controls[i] = vd.segment(i * m.n_u, m.n_u);
      dists[i] = ws.segment(i * m.n_w, m.n_w);
    }
    const model::Trajectory t = model::rollout(m, controls, dists);
    const auto rows = model::evalConstraints(m, t);
    Eigen::Index total = 0;
    for (const auto& r : rows) total += r.size();
    Eigen::VectorXd all(total);
    Eigen::Index at = 0;
    for (const auto& r : rows) {
      all.segment(at, r.size()) = r;
      at += r.size();
    }
    return all;
  };

  Eigen::VectorXd candidate =
      Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  if (!p.decisionBox.contains(candidate, 1e-9)) {
    out << "controls outside the admissible box\n";
    return 1;
  }

  sip::SipConfig scfg;
  scfg.sipTol = cfg.sipTol;
  scfg.multistartCount = cfg.multistart;
  scfg.seed = cfg.seed;
  const sip::CertifyResult r = sip::certify(p, candidate, scfg);
  if (r.certified) {
    out << "certified: worst residual " << num(r.violation) << " <= "
        << num(cfg.sipTol) << "\n";
    return 0;
  }
  out << "not certified: violation " << num(r.violation) << " at witness";
  for (int i = 0; i < r.witness.size(); ++i) out << ' ' << num(r.witness(i));
  out << "\n";
  return 2;
}

}  // namespace uaro::experiment
