#include "eigenprobe/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

namespace eigenprobe {

void OptimizerConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be > 0");
  if (learning_rate && (!(*learning_rate > 0.0) || !std::isfinite(*learning_rate))) {
    throw InvalidArgument("learning rate must be > 0");
  }
  if (n_restarts == 0) throw InvalidArgument("n_restarts must be >= 1");
  if (trace_every == 0) throw InvalidArgument("trace_every must be >= 1");
  if (!(init_stddev >= 0.0) || !std::isfinite(init_stddev)) throw InvalidArgument("init_stddev must be >= 0");
}

std::uint64_t required_queries(const OptimizerConfig& config) {
  return static_cast<std::uint64_t>(config.n_restarts) * (2 * config.restart_iters + 1) +
         2 * static_cast<std::uint64_t>(config.main_iters);
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::kRestart: return "restart";
    case Phase::kRestartEval: return "restart_eval";
    case Phase::kMain: return "main";
  }
  return "unknown";
}

namespace {

ImageTensor probe_image(const EigenBasis& basis, const LatentCoords& coords, bool clamp) {
  ImageTensor image = synthesize(basis, coords);
  if (clamp) {
    for (float& v : image.pixels()) v = std::clamp(v, 0.0f, 1.0f);
  }
  return image;
}

void require_remaining(const SimilarityOracle& oracle, std::uint64_t needed) {
  const auto remaining = oracle.ledger().remaining();
  if (remaining && *remaining < needed) {
    throw BudgetExhausted("need " + std::to_string(needed) + " queries, " + std::to_string(*remaining) +
                          " remain");
  }
}

RunInterrupted::Cause classify(const std::exception& e) {
  if (dynamic_cast<const BudgetExhausted*>(&e)) return RunInterrupted::Cause::kBudget;
  if (dynamic_cast<const ConnectionError*>(&e)) return RunInterrupted::Cause::kConnection;
  return RunInterrupted::Cause::kOther;
}

// Counts the scores actually returned, so a pair that fails halfway still
// shows up in the trace's query total.
class CountingOracle final : public SimilarityOracle {
 public:
  CountingOracle(SimilarityOracle& inner, std::uint64_t& count) : inner_(inner), count_(count) {}
  double query(const ImageTensor& image, const TargetId& target) override {
    const double s = inner_.query(image, target);
    ++count_;
    return s;
  }
  LedgerSnapshot ledger() const override { return inner_.ledger(); }

 private:
  SimilarityOracle& inner_;
  std::uint64_t& count_;
};

// Shared state of one optimization run: the query count and the trace.
class Run {
 public:
  Run(const EigenBasis& basis, SimilarityOracle& oracle, const TargetId& target,
      const OptimizerConfig& config, const std::vector<TraceMonitor>& monitors)
      : basis_(basis), oracle_(oracle, trace_.queries_used), target_(target), config_(config), monitors_(monitors),
        step_(config.resolved_learning_rate(basis.rank())) {
    for (const auto& m : monitors_) trace_.monitor_names.push_back(m.name);
  }

  void ascend(LatentCoords& coords, std::size_t iters, NormalStream& rng, Phase phase,
              std::optional<std::size_t> restart) {
    for (std::size_t i = 1; i <= iters; ++i) {
      const auto g = estimate_gradient(coords, basis_, oracle_, target_, config_.sigma, rng,
                                       config_.clamp_probes);
      coords += step_ * g.estimate;
      if (i % config_.trace_every == 0 || i == iters) {
        log(phase, restart, i, 0.5 * (g.s_minus + g.s_plus), coords);
      }
    }
  }

  double evaluate(const LatentCoords& coords, std::size_t restart) {
    require_remaining(oracle_, 1);
    const double s = oracle_.query(probe_image(basis_, coords, config_.clamp_probes), target_);
    log(Phase::kRestartEval, restart, 0, s, coords);
    return s;
  }

  RunTrace& trace() { return trace_; }

 private:
  void log(Phase phase, std::optional<std::size_t> restart, std::size_t iteration, double score,
           const LatentCoords& coords) {
    TraceRow row{phase, restart, iteration, trace_.queries_used, score, {}};
    if (!monitors_.empty()) {
      const ImageTensor image = synthesize(basis_, coords);
      row.monitors.reserve(monitors_.size());
      for (const auto& m : monitors_) row.monitors.push_back(m.evaluate(image));
    }
    trace_.rows.push_back(std::move(row));
  }

  RunTrace trace_;
  const EigenBasis& basis_;
  CountingOracle oracle_;
  const TargetId& target_;
  const OptimizerConfig& config_;
  const std::vector<TraceMonitor>& monitors_;
  double step_;
};

[[noreturn]] void interrupt(const std::exception& e, LatentCoords best, RunTrace trace) {
  trace.final_coords = best;
  throw RunInterrupted(std::string("run interrupted: ") + e.what(), classify(e), std::move(best),
                       std::move(trace));
}

}  // namespace

GradientEstimate estimate_gradient_along(const LatentCoords& coords, const Eigen::VectorXd& direction,
                                         const EigenBasis& basis, SimilarityOracle& oracle,
                                         const TargetId& target, double sigma, bool clamp_probes) {
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be > 0");
  if (coords.size() != direction.size() || static_cast<std::size_t>(coords.size()) != basis.rank()) {
    throw DimensionError("coords, direction and basis rank disagree");
  }
  require_remaining(oracle, 2);
  GradientEstimate g;
  g.direction = direction;
  g.s_minus = oracle.query(probe_image(basis, coords - direction, clamp_probes), target);
  g.s_plus = oracle.query(probe_image(basis, coords + direction, clamp_probes), target);
  const double k = static_cast<double>(coords.size());
  g.estimate = (k * (g.s_plus - g.s_minus) / (2.0 * sigma)) * direction;
  return g;
}

GradientEstimate estimate_gradient(const LatentCoords& coords, const EigenBasis& basis,
                                   SimilarityOracle& oracle, const TargetId& target, double sigma,
                                   NormalStream& rng, bool clamp_probes) {
  Eigen::VectorXd u(coords.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = sigma * rng.next();
  return estimate_gradient_along(coords, u, basis, oracle, target, sigma, clamp_probes);
}

AscentResult ascend(const LatentCoords& start, const EigenBasis& basis, SimilarityOracle& oracle,
                    const TargetId& target, const OptimizerConfig& config, std::size_t iters,
                    const std::vector<TraceMonitor>& monitors) {
  config.validate();
  if (static_cast<std::size_t>(start.size()) != basis.rank()) {
    throw DimensionError("start coords do not match basis rank");
  }
  Run run(basis, oracle, target, config, monitors);
  NormalStream rng(config.seed, streams::kMainPhase);
  LatentCoords coords = start;
  try {
    run.ascend(coords, iters, rng, Phase::kMain, std::nullopt);
  } catch (const OracleError& e) {
    interrupt(e, coords, std::move(run.trace()));
  }
  run.trace().final_coords = coords;
  return {std::move(coords), std::move(run.trace())};
}

Reconstruction reconstruct(const EigenBasis& basis, SimilarityOracle& oracle, const TargetId& target,
                           const OptimizerConfig& config, const std::vector<TraceMonitor>& monitors) {
  config.validate();
  const auto needed = required_queries(config);
  if (const auto remaining = oracle.ledger().remaining(); remaining && *remaining < needed) {
    throw InsufficientBudget("schedule needs " + std::to_string(needed) + " queries but only " +
                             std::to_string(*remaining) + " remain");
  }
  const auto k = static_cast<Eigen::Index>(basis.rank());
  Run run(basis, oracle, target, config, monitors);

  LatentCoords best = LatentCoords::Zero(k);
  double best_score = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  LatentCoords current = LatentCoords::Zero(k);

  try {
    for (std::size_t r = 0; r < config.n_restarts; ++r) {
      NormalStream rng(config.seed, streams::kRestartBase + r);
      current = LatentCoords::Zero(k);
      if (config.init_stddev > 0.0) {
        for (Eigen::Index i = 0; i < k; ++i) current[i] = config.init_stddev * rng.next();
      }
      run.ascend(current, config.restart_iters, rng, Phase::kRestart, r);
      const double s = run.evaluate(current, r);
      if (s > best_score) {
        best_score = s;
        best = current;
        run.trace().selected_restart = r;
      }
      have_best = true;
    }
  } catch (const OracleError& e) {
    interrupt(e, have_best ? best : current, std::move(run.trace()));
  }

  current = best;
  try {
    NormalStream rng(config.seed, streams::kMainPhase);
    run.ascend(current, config.main_iters, rng, Phase::kMain, std::nullopt);
  } catch (const OracleError& e) {
    interrupt(e, current, std::move(run.trace()));
  }

  run.trace().final_coords = current;
  return {synthesize(basis, current), std::move(current), std::move(run.trace())};
}

void write_trace_csv(const RunTrace& trace, std::ostream& out) {
  out << "phase,restart,iteration,queries_used,score";
  for (const auto& name : trace.monitor_names) out << ',' << name;
  out << '\n';
  char buf[32];
  for (const auto& row : trace.rows) {
    out << phase_name(row.phase) << ',';
    if (row.restart) out << *row.restart;
    out << ',' << row.iteration << ',' << row.queries_used << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", row.score);
    out << buf;
    for (double m : row.monitors) {
      std::snprintf(buf, sizeof(buf), "%.17g", m);
      out << ',' << buf;
    }
    out << '\n';
  }
}

void write_trace_csv(const RunTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_trace_csv(trace, out);
}

}  // namespace eigenprobe
