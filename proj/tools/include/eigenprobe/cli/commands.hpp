#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eigenprobe/eigenspace.hpp"
#include "eigenprobe/optimizer.hpp"
#include "eigenprobe/oracle.hpp"

namespace eigenprobe::cli {

/// Process exit codes. Stable; scripts may rely on them.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,       // anything not listed below
  kExitUsage = 2,       // bad flags or infeasible arguments
  kExitBudget = 3,      // query budget exhausted
  kExitConnection = 4,  // remote oracle unreachable or speaking another protocol
  kExitFormat = 5,      // unreadable or malformed input file
};

/// Maps a library exception to its exit code.
int exit_code_for(const std::exception& e);

/// Entry point shared by the binary and the tests. argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Asks a running `serve` command to shut down. Safe to call from any thread.
void request_shutdown();

/// builtin:<seed> or remote:<host:port>.
struct OracleSpec {
  enum class Kind { kBuiltin, kRemote };
  Kind kind = Kind::kBuiltin;
  std::uint64_t seed = 0;
  std::string address;

  static OracleSpec parse(const std::string& text);
};

/// PNG files of `dir` sorted by file name, keyed by file stem.
std::vector<std::pair<std::string, ImageTensor>> load_image_dir(const std::filesystem::path& dir);

/// Resamples and converts channels as needed so the image has `shape`.
ImageTensor conform(const ImageTensor& image, const ImageShape& shape);

/// Noise first, then quantization, so quantized outputs stay on the grid.
std::unique_ptr<SimilarityOracle> apply_wrappers(std::unique_ptr<SimilarityOracle> oracle,
                                                 std::optional<unsigned> quantize_bits, double noise_std,
                                                 std::uint64_t noise_seed);

/// One sweep axis: k, sigma, lr, restarts, restart-iters or main-iters.
struct AblationAxis {
  std::string name;
  std::vector<double> values;

  /// "sigma=0.15,0.3,0.6".
  static AblationAxis parse(const std::string& text);
};

struct AblationWorld {
  std::vector<ImageTensor> training;  // PCA fit set, all one shape
  std::vector<std::pair<std::string, ImageTensor>> targets;
  std::shared_ptr<const SyntheticEmbedder> target_embedder;
  std::shared_ptr<const SyntheticEmbedder> transfer_embedder;
};

struct AblationSpec {
  std::vector<AblationAxis> axes;
  OptimizerConfig base;  // base.seed offsets the per-row seeds
  std::size_t base_rank = 64;
  std::size_t seeds = 20;
  std::optional<unsigned> quantize_bits;
  double noise_std = 0.0;
};

struct AblationRow {
  std::string axis;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string target;
  double target_similarity = 0.0;
  double transfer_similarity = 0.0;
};

/// Every grid point is one axis changed from the base config. Row seed s
/// attacks target s mod |targets| with optimizer seed base.seed + s.
/// Infeasible points (rank above what the training set supports, bad
/// values) are skipped with a note on `log`.
std::vector<AblationRow> run_ablation(const AblationWorld& world, const AblationSpec& spec, std::ostream& log);

/// axis,value,seed,target,target_similarity,transfer_similarity
void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out);

}  // namespace eigenprobe::cli
