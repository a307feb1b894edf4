#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eigenprobe/image.hpp"
#include "eigenprobe/oracle.hpp"

namespace eigenprobe {

struct VerificationPair {
  double score = 0.0;
  int label = 0;  // 1 same identity, 0 different
};

struct ThresholdChoice {
  double threshold = 0.0;
  double accuracy = 0.0;
};

/// Exhaustive search over midpoints between consecutive distinct scores plus
/// one sentinel below the minimum and one above the maximum (min - 1, max + 1).
/// A pair is predicted "same" iff score >= threshold. Ties in accuracy go to
/// the smallest threshold. Throws InvalidArgument on empty input.
ThresholdChoice best_threshold(std::span<const VerificationPair> pairs);

/// Fraction of pairs classified correctly at `threshold`.
double accuracy_at(std::span<const VerificationPair> pairs, double threshold);

struct FoldReport {
  std::vector<double> thresholds;
  std::vector<double> accuracies;
  double mean_accuracy = 0.0;
  std::size_t folds() const noexcept { return accuracies.size(); }
};

/// Contiguous folds in input order: fold f holds [f*n/K, (f+1)*n/K). Each
/// fold's threshold is fit on the other folds and scored on the held-out one.
FoldReport kfold_accuracy(std::span<const VerificationPair> pairs, std::size_t folds = 10);

/// One row of a verification protocol. For positive pairs a reconstruction,
/// when present, replaces `first`.
struct EvaluationPair {
  ImageTensor first;
  ImageTensor second;
  int label = 0;
  std::optional<ImageTensor> reconstruction;
};

/// Scores every pair as cosine(embed(a), embed(b)), with a = reconstruction
/// for positives that have one, and runs kfold_accuracy on the result in the
/// given order.
FoldReport evaluate_replacement(std::span<const EvaluationPair> pairs, const SyntheticEmbedder& embedder,
                                std::size_t folds = 10);

/// Scores used by evaluate_replacement, exposed for baselines and reports.
std::vector<VerificationPair> score_pairs(std::span<const EvaluationPair> pairs,
                                          const SyntheticEmbedder& embedder, bool use_reconstructions);

/// Pair-list row: id_a,path_a,id_b,path_b,label.
struct PairListEntry {
  std::string id_a;
  std::filesystem::path path_a;
  std::string id_b;
  std::filesystem::path path_b;
  int label = 0;
  std::size_t line = 0;  // 1-based line in the source file
};

/// Parses a pair-list CSV with a header row. Relative paths are resolved
/// against the file's directory. Errors name the offending line.
std::vector<PairListEntry> read_pair_list(const std::filesystem::path& path);
std::vector<PairListEntry> parse_pair_list(std::istream& in, const std::filesystem::path& base_dir);

/// fold,threshold,accuracy rows followed by a "mean,,<accuracy>" summary row.
void write_fold_report(const FoldReport& report, std::ostream& out);
void write_fold_report(const FoldReport& report, const std::filesystem::path& path);

}  // namespace eigenprobe
