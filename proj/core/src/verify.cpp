#include "eigenprobe/verify.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "eigenprobe/errors.hpp"

namespace eigenprobe {

ThresholdChoice best_threshold(std::span<const VerificationPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("best_threshold needs at least one pair");
  std::vector<VerificationPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.score < b.score; });

  const std::size_t n = sorted.size();
  // Below the minimum everything is predicted "same": correct = #positives.
  std::ptrdiff_t correct =
      std::count_if(sorted.begin(), sorted.end(), [](const auto& p) { return p.label == 1; });
  ThresholdChoice best{sorted.front().score - 1.0, static_cast<double>(correct) / n};

  std::size_t i = 0;
  while (i < n) {
    // Move the whole group of equal scores below the threshold.
    std::size_t j = i;
    while (j < n && sorted[j].score == sorted[i].score) {
      correct += sorted[j].label == 1 ? -1 : 1;
      ++j;
    }
    const double threshold =
        j < n ? (sorted[i].score + sorted[j].score) / 2.0 : sorted.back().score + 1.0;
    const double acc = static_cast<double>(correct) / n;
    if (acc > best.accuracy) best = {threshold, acc};
    i = j;
  }
  return best;
}

double accuracy_at(std::span<const VerificationPair> pairs, double threshold) {
  if (pairs.empty()) throw InvalidArgument("accuracy of an empty pair list");
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const int predicted = p.score >= threshold ? 1 : 0;
    if (predicted == p.label) ++correct;
  }
  return static_cast<double>(correct) / pairs.size();
}

FoldReport kfold_accuracy(std::span<const VerificationPair> pairs, std::size_t folds) {
  if (folds < 2) throw InvalidArgument("k-fold needs at least 2 folds");
  if (pairs.size() < folds) {
    throw InvalidArgument(std::to_string(pairs.size()) + " pairs cannot be split into " +
                          std::to_string(folds) + " folds");
  }
  const std::size_t n = pairs.size();
  FoldReport report;
  std::vector<VerificationPair> train;
  train.reserve(n);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds;
    const std::size_t hi = (f + 1) * n / folds;
    train.clear();
    train.insert(train.end(), pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(lo));
    train.insert(train.end(), pairs.begin() + static_cast<std::ptrdiff_t>(hi), pairs.end());
    const auto choice = best_threshold(train);
    report.thresholds.push_back(choice.threshold);
    report.accuracies.push_back(accuracy_at(pairs.subspan(lo, hi - lo), choice.threshold));
  }
  report.mean_accuracy =
      std::accumulate(report.accuracies.begin(), report.accuracies.end(), 0.0) / static_cast<double>(folds);
  return report;
}

std::vector<VerificationPair> score_pairs(std::span<const EvaluationPair> pairs,
                                          const SyntheticEmbedder& embedder, bool use_reconstructions) {
  std::vector<VerificationPair> scored;
  scored.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw InvalidArgument("pair label must be 0 or 1");
    const ImageTensor& a =
        (use_reconstructions && p.label == 1 && p.reconstruction) ? *p.reconstruction : p.first;
    scored.push_back({cosine(embedder.embed(a), embedder.embed(p.second)), p.label});
  }
  return scored;
}

FoldReport evaluate_replacement(std::span<const EvaluationPair> pairs, const SyntheticEmbedder& embedder,
                                std::size_t folds) {
  const auto scored = score_pairs(pairs, embedder, true);
  return kfold_accuracy(scored, folds);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

}  // namespace

std::vector<PairListEntry> parse_pair_list(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<PairListEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      const auto head = split_csv_line(line);
      if (head.size() != 5 || trim(head[0]) != "id_a" || trim(head[4]) != "label") {
        throw FormatError("line " + std::to_string(lineno) +
                          ": expected header id_a,path_a,id_b,path_b,label");
      }
      continue;
    }
    auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw FormatError("line " + std::to_string(lineno) + ": expected 5 fields, got " +
                        std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    if (fields[0].empty() || fields[1].empty() || fields[2].empty() || fields[3].empty()) {
      throw FormatError("line " + std::to_string(lineno) + ": empty id or path");
    }
    if (fields[4] != "0" && fields[4] != "1") {
      throw FormatError("line " + std::to_string(lineno) + ": label must be 0 or 1, got '" + fields[4] + "'");
    }
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    entries.push_back({fields[0], resolve(fields[1]), fields[2], resolve(fields[3]),
                       fields[4] == "1" ? 1 : 0, lineno});
  }
  if (!header_seen) throw FormatError("pair list is empty");
  return entries;
}

std::vector<PairListEntry> read_pair_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return parse_pair_list(in, path.parent_path());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_fold_report(const FoldReport& report, std::ostream& out) {
  char buf[64];
  out << "fold,threshold,accuracy\n";
  for (std::size_t f = 0; f < report.folds(); ++f) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", f, report.thresholds[f], report.accuracies[f]);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,,%.17g\n", report.mean_accuracy);
  out << buf;
}

void write_fold_report(const FoldReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_fold_report(report, out);
}

}  // namespace eigenprobe
