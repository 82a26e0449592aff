#include "uaro/nested.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <random>
#include <stdexcept>

namespace uaro::nested {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double maxRow(const VectorXd& g) {
  return g.size() ? g.maxCoeff() : -std::numeric_limits<double>::infinity();
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
  return a;
}

}  // namespace

SimplexWeights::SimplexWeights(VectorXd l) : lambda(std::move(l)) {
  if (lambda.size() == 0) throw std::invalid_argument("SimplexWeights: empty");
  if (lambda.minCoeff() < 0.0)
    throw std::invalid_argument("SimplexWeights: negative weight");
  if (std::abs(lambda.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("SimplexWeights: weights must sum to 1");
}

double smoothedDisjunction(const VectorXd& terms, const SimplexWeights& w) {
  if (terms.size() != w.lambda.size())
    throw std::invalid_argument("smoothedDisjunction: size mismatch");
  return terms.dot(w.lambda);
}

double simplexMinimum(const VectorXd& terms) {
  if (terms.size() == 0)
    throw std::invalid_argument("simplexMinimum: empty terms");
  return terms.minCoeff();
}

const char* statusName(NestedStatus s) {
  switch (s) {
    case NestedStatus::Converged: return "converged";
    case NestedStatus::Infeasible: return "infeasible";
    case NestedStatus::BudgetExhausted: return "budget-exhausted";
  }
  return "?";
}

struct NestedSolver::TreeNode {
  std::vector<VectorXd> scenarios;
  std::vector<std::unique_ptr<TreeNode>> children;  // empty at the last level
  VectorXd warmControl;
  double warmDelta = kNaN;

  bool addScenario(const VectorXd& w, double tol) {
    for (const auto& q : scenarios)
      if ((q - w).lpNorm<Eigen::Infinity>() <= tol) return false;
    scenarios.push_back(w);
    return true;
  }

  long subtreeScenarioCount() const {
    long c = static_cast<long>(scenarios.size());
    for (const auto& ch : children)
      if (ch) c += ch->subtreeScenarioCount();
    return c;
  }
};

struct NestedSolver::Sub {
  VectorXd control;
  double bound = 0.0;
  NestedStatus status = NestedStatus::BudgetExhausted;
  int outer = 0;
};

struct NestedSolver::Layout {
  std::vector<TreeNode*> nodes;
  std::vector<int> levels;
  std::vector<int> offsets;
  int dim = 0;
  int deltaIdx = 0;
};

NestedSolver::NestedSolver(const model::SystemModel& m, NestedConfig cfg)
    : m_(m), cfg_(std::move(cfg)), solvesPerLevel_(m.N, 0) {}

NestedSolver::~NestedSolver() = default;

void NestedSolver::resetCounters() {
  nodeSolves_ = 0;
  std::fill(solvesPerLevel_.begin(), solvesPerLevel_.end(), 0L);
}

void NestedSolver::seedNominal(TreeNode& tree, int level) {
  tree.scenarios.push_back(m_.disturbBox.clamp(VectorXd::Zero(m_.n_w)));
  if (level < m_.N - 1) {
    auto child = std::make_unique<TreeNode>();
    seedNominal(*child, level + 1);
    tree.children.push_back(std::move(child));
  }
}

// Nominal-scenario chain from `level` down, warm-started along the first
// branch of `sibling` when available.
std::unique_ptr<NestedSolver::TreeNode> NestedSolver::makeChain(
    int level, const TreeNode* sibling) const {
  auto node = std::make_unique<TreeNode>();
  node->scenarios.push_back(m_.disturbBox.clamp(VectorXd::Zero(m_.n_w)));
  if (sibling) {
    node->warmControl = sibling->warmControl;
    node->warmDelta = sibling->warmDelta;
  }
  if (level < m_.N - 1) {
    const TreeNode* sibChild =
        sibling && !sibling->children.empty() ? sibling->children[0].get()
                                              : nullptr;
    node->children.push_back(makeChain(level + 1, sibChild));
  }
  return node;
}

void NestedSolver::collectLayout(TreeNode& n, int level, int lastLevel, int n_u,
                                 Layout& L) {
  L.nodes.push_back(&n);
  L.levels.push_back(level);
  L.offsets.push_back(L.dim);
  L.dim += n_u;
  if (level < lastLevel)
    for (auto& ch : n.children) collectLayout(*ch, level + 1, lastLevel, n_u, L);
}

NestedSolver::MemoKey NestedSolver::memoKey(int level,
                                            const model::History& hist) const {
  MemoKey key;
  key.first = level;
  auto push = [&](const std::vector<VectorXd>& vs) {
    for (const auto& v : vs)
      for (int i = 0; i < v.size(); ++i)
        key.second.push_back(std::llround(v(i) / cfg_.memoRound));
  };
  push(hist.states);
  push(hist.controls);
  push(hist.disturbances);
  return key;
}

NestedSolver::Sub NestedSolver::solveRec(int level, const model::History& hist,
                                         TreeNode& tree, bool needControl) {
  if (cfg_.validate && (level < rootLevel_ || level >= m_.N))
    throw std::logic_error("nested: recursion outside [root, N)");
  MemoKey key;
  if (cfg_.useMemo && !needControl) {
    key = memoKey(level, hist);
    std::lock_guard<std::mutex> lock(memoMutex_);
    auto it = memo_.find(key);
    // infeasible hits are re-solved: the caller may need the grown scenario
    // sets to steer its master away from the infeasible branch
    if (it != memo_.end() && it->second.feasible) {
      Sub hit;
      hit.bound = it->second.value;
      hit.status = NestedStatus::Converged;
      return hit;
    }
  }
  ++nodeSolves_;
  ++solvesPerLevel_[level];
  const Sub out = level == m_.N - 1 ? solveTerminalNode(hist, tree)
                                    : solveInner(level, hist, tree);
  if (cfg_.useMemo && out.status != NestedStatus::BudgetExhausted) {
    if (needControl) key = memoKey(level, hist);
    ExtendedValue ev = out.status == NestedStatus::Converged
                           ? ExtendedValue::finite(out.bound)
                           : ExtendedValue::negInf();
    std::lock_guard<std::mutex> lock(memoMutex_);
    memo_.insert_or_assign(std::move(key), ev);
  }
  return out;
}

NestedSolver::Sub NestedSolver::solveTerminalNode(const model::History& hist,
                                                  TreeNode& tree) {
  const int lastK = m_.N - 1;
  const VectorXd x = hist.currentState();

  sip::SipProblem p;
  p.decisionDim = m_.n_u + 1;
  {
    VectorXd lo(p.decisionDim), hi(p.decisionDim);
    lo << m_.controlBox.lower, cfg_.deltaLo;
    hi << m_.controlBox.upper, deltaHiAt(m_.N - 1);
    p.decisionBox = model::Box(lo, hi);
  }
  const int deltaIdx = m_.n_u;
  p.objective = [deltaIdx](const VectorXd& vd) { return vd(deltaIdx); };
  p.objectiveGrad = [deltaIdx](const VectorXd& vd) {
    VectorXd g = VectorXd::Zero(vd.size());
    g(deltaIdx) = 1.0;
    return g;
  };
  p.scenarioDim = m_.n_w;
  p.scenarioBox = m_.disturbBox;
  p.constraint = [this, lastK, x, &hist, deltaIdx](const VectorXd& vd,
                                                   const VectorXd& w) {
    const VectorXd v = vd.head(m_.n_u);
    const VectorXd s = model::step(m_, lastK, x, v, w);
    const VectorXd g = model::constraintAt(m_, m_.N, s);
    const double J = model::evalCost(m_, model::toTrajectory(
                                              model::extend(hist, v, w, s)));
    VectorXd out(g.size() + 1);
    out << g, J - vd(deltaIdx);
    return out;
  };

  sip::SipConfig scfg;
  scfg.sipTol = cfg_.sipTol;
  scfg.relTol = cfg_.relTol;
  scfg.maxOuter = cfg_.maxOuter;
  scfg.multistartCount = std::max(4, cfg_.scenarioCandidates);
  scfg.searchInnerIters = 20;
  scfg.masterRetryStarts = cfg_.masterRetryStarts;
  scfg.seed = mix(cfg_.seed, 0x7e21ULL);
  scfg.nlp = cfg_.nlp;
  scfg.validate = false;  // master may legitimately move between calls
  if (tree.warmControl.size() == m_.n_u && std::isfinite(tree.warmDelta)) {
    VectorXd start(p.decisionDim);
    start << tree.warmControl, tree.warmDelta;
    scfg.start = start;
  }

  sip::ScenarioSet init;
  for (const auto& w : tree.scenarios) init.add(w);
  const sip::SipSolution sol = sip::solveSip(p, init, scfg);

  tree.scenarios = sol.scenarios.points();
  Sub out;
  out.outer = sol.outerIterations;
  out.bound = sol.objectiveValue;
  if (sol.decision.size() == p.decisionDim) {
    out.control = sol.decision.head(m_.n_u);
    tree.warmControl = out.control;
    tree.warmDelta = sol.decision(deltaIdx);
  }
  switch (sol.status) {
    case sip::SipStatus::Converged: out.status = NestedStatus::Converged; break;
    case sip::SipStatus::Infeasible: out.status = NestedStatus::Infeasible; break;
    case sip::SipStatus::BudgetExhausted:
      out.status = NestedStatus::BudgetExhausted;
      break;
  }
  return out;
}

NestedSolver::Sub NestedSolver::solveInner(int level, const model::History& hist,
                                           TreeNode& tree) {
  if (tree.scenarios.empty()) seedNominal(tree, level);

  Sub best;
  int noProgress = 0;
  for (int outer = 1; outer <= cfg_.maxOuter; ++outer) {
    Layout L;
    collectLayout(tree, level, m_.N - 1, m_.n_u, L);
    L.deltaIdx = L.dim;

    nlp::NlpProblem master;
    master.dim = L.dim + 1;
    {
      VectorXd lo(master.dim), hi(master.dim);
      for (std::size_t i = 0; i < L.nodes.size(); ++i) {
        lo.segment(L.offsets[i], m_.n_u) = m_.controlBox.lower;
        hi.segment(L.offsets[i], m_.n_u) = m_.controlBox.upper;
      }
      lo(L.deltaIdx) = cfg_.deltaLo;
      hi(L.deltaIdx) = deltaHiAt(level);
      master.bounds = model::Box(lo, hi);
    }
    const int deltaIdx = L.deltaIdx;
    master.objective = [deltaIdx](const VectorXd& v) { return v(deltaIdx); };
    master.objectiveGrad = [deltaIdx](const VectorXd& v) {
      VectorXd g = VectorXd::Zero(v.size());
      g(deltaIdx) = 1.0;
      return g;
    };
    // Shared DFS row engine. Rows follow a fixed walk order in which every
    // node's subtree occupies a contiguous block, so Jacobian columns can be
    // recomputed from the owning node down instead of re-walking the tree.
    struct NodeMeta {
      model::History entry;
      int rowStart = 0;
      int rowEnd = 0;
    };
    auto walkRows = [this, &L](TreeNode& start, int startLvl,
                               std::size_t cursor0, model::History work,
                               const VectorXd& vars, double delta,
                               std::vector<NodeMeta>* meta,
                               std::vector<char>* costMask) {
      std::vector<double> rows;
      std::size_t cursor = cursor0;
      auto walk = [&](auto&& self, TreeNode& n, int lvl) -> void {
        const std::size_t idx = cursor++;
        if (meta) {
          (*meta)[idx].entry = work;
          (*meta)[idx].rowStart = static_cast<int>(rows.size());
        }
        const int off = L.offsets[idx];
        const VectorXd v = vars.segment(off, m_.n_u);
        for (std::size_t i = 0; i < n.scenarios.size(); ++i) {
          const VectorXd& w = n.scenarios[i];
          const VectorXd s = model::step(m_, lvl, work.currentState(), v, w);
          const VectorXd g = model::constraintAt(m_, lvl + 1, s);
          for (int r = 0; r < g.size(); ++r) {
            rows.push_back(g(r));
            if (costMask) costMask->push_back(0);
          }
          work.controls.push_back(v);
          work.disturbances.push_back(w);
          work.states.push_back(s);
          if (lvl == m_.N - 1) {
            rows.push_back(model::evalCost(m_, model::toTrajectory(work)) - delta);
            if (costMask) costMask->push_back(1);
          } else {
            self(self, *n.children[i], lvl + 1);
          }
          work.controls.pop_back();
          work.disturbances.pop_back();
          work.states.pop_back();
        }
        if (meta) (*meta)[idx].rowEnd = static_cast<int>(rows.size());
      };
      walk(walk, start, startLvl);
      return rows;
    };

    master.inequalities = [walkRows, &tree, level, &hist,
                           deltaIdx](const VectorXd& vars) {
      auto rows =
          walkRows(tree, level, 0, hist, vars, vars(deltaIdx), nullptr, nullptr);
      return Eigen::Map<VectorXd>(rows.data(), static_cast<Eigen::Index>(rows.size())).eval();
    };

    const double fdStep = cfg_.nlp.fdStep;
    master.inequalityJac = [this, walkRows, &L, &tree, level, &hist, deltaIdx,
                            fdStep](const VectorXd& vars) {
      std::vector<NodeMeta> meta(L.nodes.size());
      std::vector<char> costMask;
      const std::vector<double> base = walkRows(
          tree, level, 0, hist, vars, vars(deltaIdx), &meta, &costMask);
      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(
          static_cast<Eigen::Index>(base.size()), vars.size());
      for (std::size_t i = 0; i < L.nodes.size(); ++i) {
        for (int c = 0; c < m_.n_u; ++c) {
          const int j = L.offsets[i] + c;
          const double hj = fdStep * std::max(1.0, std::abs(vars(j)));
          VectorXd vp = vars;
          vp(j) += hj;
          const std::vector<double> pert =
              walkRows(*L.nodes[i], L.levels[i], i, meta[i].entry, vp,
                       vars(deltaIdx), nullptr, nullptr);
          for (std::size_t r = 0; r < pert.size(); ++r)
            jac(meta[i].rowStart + static_cast<int>(r), j) =
                (pert[r] - base[meta[i].rowStart + static_cast<int>(r)]) / hj;
        }
      }
      for (std::size_t r = 0; r < base.size(); ++r)
        if (costMask[r]) jac(static_cast<Eigen::Index>(r), deltaIdx) = -1.0;
      return jac;
    };

    // Worst leaf cost over the stored branches at fixed controls: the exact
    // optimal delta for those controls.
    auto maxLeafCost = [this, &L, &tree, level, &hist](const VectorXd& vars) {
      double worst = -std::numeric_limits<double>::infinity();
      model::History work = hist;
      std::size_t cursor = 0;
      auto walk = [&](auto&& self, TreeNode& n, int lvl) -> void {
        const int off = L.offsets[cursor++];
        const VectorXd v = vars.segment(off, m_.n_u);
        for (std::size_t i = 0; i < n.scenarios.size(); ++i) {
          const VectorXd s =
              model::step(m_, lvl, work.currentState(), v, n.scenarios[i]);
          work.controls.push_back(v);
          work.disturbances.push_back(n.scenarios[i]);
          work.states.push_back(s);
          if (lvl == m_.N - 1) {
            worst = std::max(worst,
                             model::evalCost(m_, model::toTrajectory(work)));
          } else {
            self(self, *n.children[i], lvl + 1);
          }
          work.controls.pop_back();
          work.disturbances.pop_back();
          work.states.pop_back();
        }
      };
      walk(walk, tree, level);
      return worst;
    };

    // Warm start from the last committed tree solution; delta starts tight at
    // the worst leaf cost so the epigraph row is active from the first step.
    VectorXd start(master.dim);
    for (std::size_t i = 0; i < L.nodes.size(); ++i) {
      const TreeNode* n = L.nodes[i];
      start.segment(L.offsets[i], m_.n_u) =
          n->warmControl.size() == m_.n_u ? n->warmControl
                                          : m_.controlBox.center();
    }
    start(deltaIdx) = maxLeafCost(start);

    const double startViol = master.inequalities(start).maxCoeff();
    nlp::NlpResult res = nlp::solveNlp(master, start, cfg_.nlp);
    // Never accept a degradation from a feasible warm start: on nonconvex
    // models a stalled penalty loop can drift into a far more conservative
    // basin, and the warm point itself is already a valid master solution.
    if (startViol <= 10 * cfg_.nlp.feasTol &&
        (!res.feasible(10 * cfg_.nlp.feasTol) ||
         res.objectiveValue > start(deltaIdx))) {
      res.point = start;
      res.objectiveValue = start(deltaIdx);
      res.maxInequality = startViol;
      res.status = nlp::NlpStatus::LocalOptimum;
    }
    // Tighten-and-redescend: a feasible stall leaves delta above the exact
    // optimum for the found controls; snapping it there and re-solving lets
    // the controls keep improving instead of certifying a conservative bound.
    for (int pass = 0; pass < 5 && res.feasible(10 * cfg_.nlp.feasTol); ++pass) {
      VectorXd tightened = res.point;
      tightened(deltaIdx) = maxLeafCost(res.point);
      if (tightened(deltaIdx) >= res.point(deltaIdx) - 1e-8) break;
      const nlp::NlpResult again = nlp::solveNlp(master, tightened, cfg_.nlp);
      if (!again.feasible(10 * cfg_.nlp.feasTol) ||
          again.objectiveValue >= res.objectiveValue - 1e-8) {
        if (again.feasible(10 * cfg_.nlp.feasTol) &&
            again.objectiveValue < res.objectiveValue)
          res = again;
        break;
      }
      res = again;
    }
    if (!res.usable(10 * cfg_.nlp.feasTol) && cfg_.masterRetryStarts > 0) {
      nlp::MultistartConfig ms;
      ms.starts = cfg_.masterRetryStarts;
      ms.seed = mix(cfg_.seed, static_cast<std::uint64_t>(level) * 131 + outer);
      ms.firstStart = start;
      const nlp::NlpResult retry = nlp::multistart(master, ms, cfg_.nlp);
      if (retry.usable(10 * cfg_.nlp.feasTol) ||
          retry.maxInequality < res.maxInequality)
        res = retry;
    }
    // an Infeasible label with a numerically feasible point is a stalled
    // penalty loop, not evidence of infeasibility — use the point
    if (res.status == nlp::NlpStatus::Infeasible &&
        !res.feasible(10 * cfg_.nlp.feasTol)) {
      best.status = NestedStatus::Infeasible;
      best.outer = outer;
      return best;
    }
    if (res.status == nlp::NlpStatus::EvaluationError ||
        !res.feasible(10 * cfg_.nlp.feasTol)) {
      best.outer = outer;
      return best;  // solver failure, report best iterate
    }

    for (std::size_t i = 0; i < L.nodes.size(); ++i) {
      L.nodes[i]->warmControl = res.point.segment(L.offsets[i], m_.n_u);
    }
    // report the exact bound for the found controls, not the (possibly
    // loose) epigraph iterate
    const double delta = std::min(res.point(deltaIdx), maxLeafCost(res.point));
    tree.warmDelta = delta;
    if (std::getenv("UARO_DEBUG")) {
      std::fprintf(stderr,
                   "[nested] lvl=%d outer=%d dim=%d scen=%ld delta=%.6f "
                   "startDelta=%.6f startViol=%.2e nlp=%s iters=%d maxIneq=%.2e\n",
                   level, outer, master.dim, tree.subtreeScenarioCount(), delta,
                   start(deltaIdx), startViol, nlp::statusName(res.status),
                   res.iterations, res.maxInequality);
    }

    const VectorXd v = res.point.head(m_.n_u);
    best.control = v;
    best.bound = delta;
    best.outer = outer;
    best.status = NestedStatus::BudgetExhausted;

    // Re-verify stored branches: the child scenario sets were adequate for
    // the previous iterate, not necessarily for the new one.
    const long countBefore = tree.subtreeScenarioCount();
    bool grown = false;
    bool childDegraded = false;
    const double childTol = std::max({cfg_.sipTol, 50 * cfg_.nlp.feasTol,
                                      cfg_.relTol * std::abs(delta)});
    const VectorXd x = hist.currentState();
    for (std::size_t i = 0; i < tree.scenarios.size() && !grown; ++i) {
      const VectorXd& w = tree.scenarios[i];
      const VectorXd s = model::step(m_, level, x, v, w);
      const model::History childHist = model::extend(hist, v, w, s);
      TreeNode& child = *tree.children[i];
      if (cfg_.useMemo) {
        // fast path: branch already proven compatible with this delta; a
        // disagreeing memo value must not short-circuit, because only a real
        // solve can grow the stored scenario sets the master collapses over
        std::lock_guard<std::mutex> lock(memoMutex_);
        auto it = memo_.find(memoKey(level + 1, childHist));
        if (it != memo_.end() && it->second.feasible &&
            it->second.value <= delta + childTol)
          continue;
      }
      const long before = child.subtreeScenarioCount();
      const Sub cs = solveRec(level + 1, childHist, child, /*needControl=*/true);
      const bool childGrew = child.subtreeScenarioCount() != before;
      if (cs.status == NestedStatus::Infeasible) {
        if (childGrew) {
          grown = true;  // master must adapt to the new child constraints
        } else {
          best.status = NestedStatus::BudgetExhausted;
          return best;  // master/child disagreement, numerical failure
        }
      } else {
        if (childGrew || cs.bound > delta + childTol) grown = true;
        if (cs.status == NestedStatus::BudgetExhausted) childDegraded = true;
      }
    }
    if (grown) {
      if (tree.subtreeScenarioCount() == countBefore) {
        if (++noProgress > 2) return best;
      } else {
        noProgress = 0;
      }
      continue;
    }

    // Branch plan along the nominal chain: continuation solves for candidate
    // scenarios start from it rather than from a cold box center.
    std::vector<VectorXd> chainWarm;
    for (const TreeNode* n =
             tree.children.empty() ? nullptr : tree.children[0].get();
         n; n = n->children.empty() ? nullptr : n->children[0].get())
      chainWarm.push_back(n->warmControl);
    auto [wNew, viol] = searchScenario(level, hist, v, delta, &chainWarm);
    const double sTol = std::max(cfg_.sipTol, cfg_.relTol * std::abs(delta));
    if (viol > sTol) {
      if (cfg_.validate && !std::isfinite(viol))
        throw std::logic_error("nested: non-finite scenario violation");
      if (!tree.addScenario(wNew, 1e-9)) {
        // stalled on a duplicate witness: the residual violation is within
        // solver resolution, otherwise report the budget stall
        if (viol <= 10 * sTol) best.status = NestedStatus::Converged;
        return best;
      }
      const TreeNode* sibling =
          tree.children.empty() ? nullptr : tree.children[0].get();
      tree.children.push_back(makeChain(level + 1, sibling));
      noProgress = 0;
      continue;
    }
    best.status =
        childDegraded ? NestedStatus::BudgetExhausted : NestedStatus::Converged;
    return best;
  }
  return best;
}

double NestedSolver::candidateViolation(int level, const model::History& hist,
                                        const VectorXd& control, double bound,
                                        const VectorXd& omega,
                                        const std::vector<VectorXd>* warmChain) {
  const VectorXd s = model::step(m_, level, hist.currentState(), control, omega);
  const VectorXd g = model::constraintAt(m_, level + 1, s);
  double viol = maxRow(g);
  const model::History childHist = model::extend(hist, control, omega, s);
  if (level == m_.N - 1) {
    viol = std::max(viol, model::evalCost(m_, model::toTrajectory(childHist)) -
                              bound);
  } else {
    const ExtendedValue ev = continuationValue(level + 1, childHist, warmChain);
    viol = std::max(viol, ev.feasible ? ev.value - bound : cfg_.negInfViolation);
  }
  return viol;
}

std::pair<VectorXd, double> NestedSolver::searchScenario(
    int level, const model::History& hist, const VectorXd& control,
    double bound, const std::vector<VectorXd>* warmChain) {
  std::vector<VectorXd> candidates;
  if (m_.n_w <= 6) candidates = m_.disturbBox.vertices();
  candidates.push_back(m_.disturbBox.clamp(VectorXd::Zero(m_.n_w)));
  std::mt19937_64 rng(mix(cfg_.seed, mix(searchCalls_++, level)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < cfg_.scenarioCandidates; ++i) {
    VectorXd w(m_.n_w);
    for (int j = 0; j < m_.n_w; ++j)
      w(j) = m_.disturbBox.lower(j) + unit(rng) * m_.disturbBox.width(j);
    candidates.push_back(std::move(w));
  }

  VectorXd bestW = candidates.front();
  double bestV = -std::numeric_limits<double>::infinity();
  for (const auto& w : candidates) {
    const double v = candidateViolation(level, hist, control, bound, w, warmChain);
    if (v > bestV) {
      bestV = v;
      bestW = w;
    }
  }

  if (cfg_.refineIters > 0 && bestV < cfg_.negInfViolation) {
    VectorXd h(m_.n_w);
    for (int j = 0; j < m_.n_w; ++j) h(j) = 0.25 * m_.disturbBox.width(j);
    for (int it = 0; it < cfg_.refineIters; ++it) {
      for (int j = 0; j < m_.n_w; ++j) {
        for (const double sgn : {-1.0, 1.0}) {
          VectorXd w = bestW;
          w(j) += sgn * h(j);
          w = m_.disturbBox.clamp(w);
          const double v = candidateViolation(level, hist, control, bound, w, warmChain);
          if (v > bestV) {
            bestV = v;
            bestW = w;
          }
        }
      }
      h *= 0.5;
    }
  }
  return {bestW, bestV};
}

ExtendedValue NestedSolver::continuationValue(int level,
                                              const model::History& hist,
                                              const std::vector<VectorXd>* warmChain) {
  if (level == m_.N) {
    // No decisions remain; the completed trajectory stands on its own.
    if (maxRow(model::constraintAt(m_, m_.N, hist.currentState())) > cfg_.sipTol)
      return ExtendedValue::negInf();
    return ExtendedValue::finite(
        model::evalCost(m_, model::toTrajectory(hist)));
  }

  // solveRec consults and fills the memo itself
  TreeNode tree;
  if (warmChain && !warmChain->empty()) {
    seedNominal(tree, level);
    TreeNode* n = &tree;
    for (std::size_t i = 0; i < warmChain->size() && n; ++i) {
      if ((*warmChain)[i].size() == m_.n_u) n->warmControl = (*warmChain)[i];
      n = n->children.empty() ? nullptr : n->children[0].get();
    }
  }
  const Sub sub = solveRec(level, hist, tree);
  switch (sub.status) {
    case NestedStatus::Converged: return ExtendedValue::finite(sub.bound);
    case NestedStatus::Infeasible: return ExtendedValue::negInf();
    case NestedStatus::BudgetExhausted: break;
  }
  return ExtendedValue::finite(sub.bound);  // best effort, not memoized
}

namespace {

void requireCtx(const NodeContext& ctx) {
  if (!ctx.valid()) throw std::invalid_argument("nested: invalid NodeContext");
}

}  // namespace

void NestedSolver::gatherScenarios(const TreeNode& tree, int depth,
                                   std::vector<sip::ScenarioSet>& out) const {
  if (depth >= static_cast<int>(out.size())) return;
  for (const auto& w : tree.scenarios) out[depth].add(w);
  for (const auto& ch : tree.children)
    if (ch) gatherScenarios(*ch, depth + 1, out);
}

// Reported node bounds carry (N - level) units of certification slack (see
// solveNode), so a cap gamma admits raw epigraph values up to the previous
// step's certified level: backing the box off by the remaining slack keeps
// the reported sequence monotone without ever cutting the true optimum.
double NestedSolver::deltaHiAt(int level) const {
  if (level != rootLevel_ || !std::isfinite(boundCap_)) return cfg_.deltaHi;
  double d = boundCap_;
  for (int i = 0; i < 6; ++i)
    d = boundCap_ - (m_.N - level) *
                        std::max(cfg_.sipTol, cfg_.relTol * std::abs(d));
  return std::min(cfg_.deltaHi, d);
}

NestedSolution NestedSolver::solveNode(const NodeContext& ctx) {
  requireCtx(ctx);
  rootLevel_ = ctx.level;
  boundCap_ = ctx.boundCap;
  // Uncapped solves are fully determined by (level, prefix); serve repeats
  // from the cache (with the warm plan restored for the following level).
  const bool cacheable = cfg_.useMemo && !std::isfinite(ctx.boundCap);
  MemoKey cacheKey;
  if (cacheable) {
    cacheKey = memoKey(ctx.level, ctx.history);
    std::lock_guard<std::mutex> lock(memoMutex_);
    auto it = solCache_.find(cacheKey);
    if (it != solCache_.end()) {
      planWarm_ = it->second.plan;
      planWarmRoot_ = ctx.level;
      planWarmDelta_ = it->second.planDelta;
      return it->second.sol;
    }
  }
  const long solvesBefore = nodeSolves_;
  TreeNode tree;
  // Seed the nominal branch with the previous root solve's shifted plan: a
  // consecutive-level call continues the same closed-loop run, so the old
  // branch controls start the master in the already-certified basin instead
  // of a fresh (possibly much worse) local one.
  if (!planWarm_.empty() && planWarmRoot_ + 1 == ctx.level) {
    seedNominal(tree, ctx.level);
    TreeNode* n = &tree;
    for (std::size_t i = 1; i < planWarm_.size() && n; ++i) {
      n->warmControl = planWarm_[i];
      n->warmDelta = planWarmDelta_;
      n = n->children.empty() ? nullptr : n->children[0].get();
    }
  }
  const Sub sub = solveRec(ctx.level, ctx.history, tree, /*needControl=*/true);

  planWarm_.clear();
  if (sub.status != NestedStatus::Infeasible && std::isfinite(sub.bound)) {
    planWarmRoot_ = ctx.level;
    planWarmDelta_ = sub.bound;
    const TreeNode* n = &tree;
    while (n) {
      planWarm_.push_back(n->warmControl);
      n = n->children.empty() ? nullptr : n->children[0].get();
    }
  }

  NestedSolution sol;
  sol.control = sub.control;
  // Report above the level the scenario search certified: violations were
  // checked against sub.bound with threshold tol, so the certified worst case
  // is sub.bound + tol; each deeper re-decision adds one more search, hence
  // (N - level) stacked units. The raw epigraph value would understate the
  // bound by up to that margin and break monotone closed-loop reporting.
  sol.bound = sub.bound +
              (m_.N - ctx.level) *
                  std::max(cfg_.sipTol, cfg_.relTol * std::abs(sub.bound));
  sol.status = sub.status;
  sol.outerIterations = sub.outer;
  sol.nodeSolves = nodeSolves_ - solvesBefore;
  sol.scenariosByLevel.assign(m_.N - ctx.level, sip::ScenarioSet{});
  gatherScenarios(tree, 0, sol.scenariosByLevel);
  if (cacheable) {
    std::lock_guard<std::mutex> lock(memoMutex_);
    solCache_.emplace(std::move(cacheKey),
                      CachedSolution{sol, planWarm_, planWarmDelta_});
  }
  return sol;
}

NestedSolution NestedSolver::solveTerminal(const NodeContext& ctx) {
  requireCtx(ctx);
  if (ctx.level != m_.N - 1)
    throw std::invalid_argument("solveTerminal: level must be N-1");
  return solveNode(ctx);
}

ExtendedValue NestedSolver::evalPTilde(const NodeContext& ctx) {
  requireCtx(ctx);
  rootLevel_ = ctx.level;
  boundCap_ = std::numeric_limits<double>::infinity();
  return continuationValue(ctx.level, ctx.history);
}

std::pair<VectorXd, double> NestedSolver::scenarioGen(const NodeContext& ctx,
                                                      const VectorXd& control,
                                                      double bound) {
  requireCtx(ctx);
  rootLevel_ = ctx.level;
  boundCap_ = std::numeric_limits<double>::infinity();
  return searchScenario(ctx.level, ctx.history, control, bound);
}

double smoothedConstraintMin(
    const std::function<VectorXd(const VectorXd&)>& residuals,
    const model::Box& omegaBox, const NestedConfig& cfg) {
  auto pointwiseMin = [&](const VectorXd& w) {
    return simplexMinimum(residuals(w));
  };

  std::vector<VectorXd> starts;
  if (omegaBox.dim() <= 6) starts = omegaBox.vertices();
  starts.push_back(omegaBox.center());
  std::mt19937_64 rng(mix(cfg.seed, 0x5e50u));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < cfg.scenarioCandidates + 4; ++i) {
    VectorXd w(omegaBox.dim());
    for (int j = 0; j < omegaBox.dim(); ++j)
      w(j) = omegaBox.lower(j) + unit(rng) * omegaBox.width(j);
    starts.push_back(std::move(w));
  }

  nlp::NlpProblem descent;
  descent.dim = omegaBox.dim();
  descent.bounds = omegaBox;
  descent.objective = pointwiseMin;
  nlp::NlpConfig ncfg = cfg.nlp;
  ncfg.maxOuter = 1;
  ncfg.maxInner = 40;

  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    best = std::min(best, pointwiseMin(s));
    const nlp::NlpResult r = nlp::solveNlp(descent, s, ncfg);
    if (r.status != nlp::NlpStatus::EvaluationError)
      best = std::min(best, r.objectiveValue);
  }
  return best;
}

double NestedSolver::scenarioGenSmoothedViolation(const NodeContext& ctx,
                                                  const VectorXd& control,
                                                  double bound,
                                                  const VectorXd& omega) {
  requireCtx(ctx);
  if (ctx.level > m_.N - 2)
    throw std::invalid_argument(
        "scenarioGenSmoothedViolation: needs a continuation level");
  rootLevel_ = ctx.level;
  boundCap_ = std::numeric_limits<double>::infinity();

  const int j = ctx.level;
  const VectorXd s = model::step(m_, j, ctx.history.currentState(), control, omega);
  const VectorXd gNow = model::constraintAt(m_, j + 1, s);
  const model::History zeta1 = model::extend(ctx.history, control, omega, s);

  // Membership pairs (v1, delta1): no omega1 may falsify the continuation,
  // i.e. the disjunctive minimum must stay positive.
  nlp::NlpProblem inner;
  inner.dim = m_.n_u + 1;
  {
    VectorXd lo(inner.dim), hi(inner.dim);
    lo << m_.controlBox.lower, cfg_.deltaLo;
    hi << m_.controlBox.upper, cfg_.deltaHi;
    inner.bounds = model::Box(lo, hi);
  }
  const int deltaIdx = m_.n_u;
  inner.objective = [deltaIdx](const VectorXd& vd) { return vd(deltaIdx); };
  inner.objectiveGrad = [deltaIdx](const VectorXd& vd) {
    VectorXd g = VectorXd::Zero(vd.size());
    g(deltaIdx) = 1.0;
    return g;
  };
  inner.numInequalities = 1;
  NestedConfig smoothCfg = cfg_;
  smoothCfg.scenarioCandidates = 0;  // vertices + center carry the search
  smoothCfg.nlp.maxInner = 30;
  inner.inequalities = [this, j, &zeta1, s, deltaIdx,
                        &smoothCfg](const VectorXd& vd) {
    const VectorXd v1 = vd.head(m_.n_u);
    const double delta1 = vd(deltaIdx);
    auto residuals = [&](const VectorXd& w1) {
      const VectorXd s2 = model::step(m_, j + 1, s, v1, w1);
      const VectorXd rows2 = model::constraintAt(m_, j + 2, s2);
      const model::History zeta2 = model::extend(zeta1, v1, w1, s2);
      const ExtendedValue ev = continuationValue(j + 2, zeta2);
      const double val = ev.feasible ? ev.value : -cfg_.negInfViolation;
      VectorXd r(1 + rows2.size());
      r(0) = delta1 - val + cfg_.epsilon;
      for (int i = 0; i < rows2.size(); ++i) r(1 + i) = -rows2(i) + cfg_.epsilon;
      return r;
    };
    VectorXd out(1);
    out(0) = -smoothedConstraintMin(residuals, m_.disturbBox, smoothCfg);
    return out;
  };

  nlp::MultistartConfig ms;
  ms.starts = 4;
  ms.seed = mix(cfg_.seed, 0x5335u);
  VectorXd start(inner.dim);
  start << m_.controlBox.center(), 0.0;
  ms.firstStart = start;
  nlp::NlpConfig masterCfg = cfg_.nlp;
  masterCfg.maxOuter = 30;
  masterCfg.maxInner = 100;
  const nlp::NlpResult r = nlp::multistart(inner, ms, masterCfg);

  double sigma;
  if (r.usable(10 * cfg_.nlp.feasTol)) {
    sigma = r.point(deltaIdx) - bound;
  } else {
    sigma = cfg_.negInfViolation;  // no valid continuation pair exists
  }
  return std::max(maxRow(gNow), sigma);
}

}  // namespace uaro::nested
