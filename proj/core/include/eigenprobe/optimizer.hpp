#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eigenprobe/eigenspace.hpp"
#include "eigenprobe/errors.hpp"
#include "eigenprobe/oracle.hpp"
#include "eigenprobe/prng.hpp"

namespace eigenprobe {

struct OptimizerConfig {
  double sigma = 0.3;
  /// Step size. Unset means 1/k (see resolved_learning_rate).
  std::optional<double> learning_rate;
  std::size_t n_restarts = 10;
  std::size_t restart_iters = 500;
  std::size_t main_iters = 15000;
  std::uint64_t seed = 0;
  /// Log every n-th ascent iteration (the last one of each phase is always logged).
  std::size_t trace_every = 1;
  /// Restarts begin at c = 0 when zero, otherwise at init_stddev * N(0, I).
  double init_stddev = 0.0;
  /// Clamp probe pixels to [0, 1] before sending them to the oracle.
  bool clamp_probes = false;

  /// E[G] = k sigma grad S, so a 1/k step keeps the expected move size
  /// independent of the subspace dimension.
  double resolved_learning_rate(std::size_t rank) const {
    return learning_rate.value_or(1.0 / static_cast<double>(rank));
  }

  /// Throws InvalidArgument on a non-positive sigma/learning rate, zero
  /// restarts or zero trace_every.
  void validate() const;
};

/// n_restarts * (2 * restart_iters + 1) + 2 * main_iters.
std::uint64_t required_queries(const OptimizerConfig& config);

struct GradientEstimate {
  Eigen::VectorXd direction;  // u ~ N(0, sigma^2 I)
  double s_minus = 0.0;       // S(c - u), queried first
  double s_plus = 0.0;        // S(c + u), queried second
  Eigen::VectorXd estimate;   // k * (s_plus - s_minus) / (2 sigma) * u
};

/// Two-point estimate along `direction`. Exactly two oracle queries, minus
/// side first. Throws BudgetExhausted without querying when fewer than two
/// queries remain.
GradientEstimate estimate_gradient_along(const LatentCoords& coords, const Eigen::VectorXd& direction,
                                         const EigenBasis& basis, SimilarityOracle& oracle,
                                         const TargetId& target, double sigma,
                                         bool clamp_probes = false);

/// Draws u from `rng` (k normals scaled by sigma), then estimates along it.
GradientEstimate estimate_gradient(const LatentCoords& coords, const EigenBasis& basis,
                                   SimilarityOracle& oracle, const TargetId& target, double sigma,
                                   NormalStream& rng, bool clamp_probes = false);

enum class Phase { kRestart, kRestartEval, kMain };
const char* phase_name(Phase phase);

struct TraceRow {
  Phase phase = Phase::kMain;
  std::optional<std::size_t> restart;  // unset in the main phase
  std::size_t iteration = 0;           // 1-based within the phase; 0 for restart_eval
  std::uint64_t queries_used = 0;      // cumulative for this run
  /// Ascent rows: mean of the two probe scores. restart_eval rows: the
  /// evaluated score.
  double score = 0.0;
  std::vector<double> monitors;  // one value per RunTrace::monitor_names
};

/// Side channel evaluated on the current iterate for logging only. Monitors
/// never touch the attacked oracle's ledger.
struct TraceMonitor {
  std::string name;
  std::function<double(const ImageTensor&)> evaluate;
};

struct RunTrace {
  std::vector<std::string> monitor_names;
  std::vector<TraceRow> rows;
  std::optional<std::size_t> selected_restart;
  std::uint64_t queries_used = 0;
  LatentCoords final_coords;
};

/// CSV: phase,restart,iteration,queries_used,score[,monitor...]; one header row.
void write_trace_csv(const RunTrace& trace, std::ostream& out);
void write_trace_csv(const RunTrace& trace, const std::filesystem::path& path);

/// A run that stopped early. Carries the best coordinates reached so far and
/// the trace up to the failure; cause() tells budget from transport trouble.
class RunInterrupted : public Error {
 public:
  enum class Cause { kBudget, kConnection, kOther };

  RunInterrupted(const std::string& what, Cause cause, LatentCoords best, RunTrace trace)
      : Error(what), cause_(cause), best_(std::move(best)), trace_(std::move(trace)) {}

  Cause cause() const noexcept { return cause_; }
  const LatentCoords& best_coords() const noexcept { return best_; }
  const RunTrace& partial_trace() const noexcept { return trace_; }

 private:
  Cause cause_;
  LatentCoords best_;
  RunTrace trace_;
};

/// Rejected before any query: the oracle's remaining budget is below
/// required_queries(config).
class InsufficientBudget : public BudgetExhausted {
 public:
  using BudgetExhausted::BudgetExhausted;
};

struct AscentResult {
  LatentCoords coords;
  RunTrace trace;
};

/// `iters` sequential estimate-and-step updates c += eta * G drawing
/// directions from the main-phase stream of config.seed. Consumes exactly
/// 2 * iters queries. Failures surface as RunInterrupted.
AscentResult ascend(const LatentCoords& start, const EigenBasis& basis, SimilarityOracle& oracle,
                    const TargetId& target, const OptimizerConfig& config, std::size_t iters,
                    const std::vector<TraceMonitor>& monitors = {});

struct Reconstruction {
  ImageTensor image;  // synthesize(basis, coords), unclamped
  LatentCoords coords;
  RunTrace trace;
};

/// Multi-start zero-order reconstruction.
///
/// Phase 1 runs n_restarts short ascents (restart r draws from stream
/// streams::kRestartBase + r), scores each end point with one extra query
/// and keeps the best (lowest index on ties). Phase 2 continues the winner
/// for main_iters on streams::kMainPhase. Consumes exactly
/// required_queries(config) queries.
Reconstruction reconstruct(const EigenBasis& basis, SimilarityOracle& oracle, const TargetId& target,
                           const OptimizerConfig& config, const std::vector<TraceMonitor>& monitors = {});

}  // namespace eigenprobe
