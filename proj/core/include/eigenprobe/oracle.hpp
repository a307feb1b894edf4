#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eigenprobe/image.hpp"

namespace eigenprobe {

/// Opaque, non-empty identity label.
class TargetId {
 public:
  explicit TargetId(std::string id);
  const std::string& str() const noexcept { return id_; }
  friend auto operator<=>(const TargetId&, const TargetId&) = default;

 private:
  std::string id_;
};

struct LedgerSnapshot {
  std::uint64_t used = 0;
  std::optional<std::uint64_t> budget;  // nullopt = unlimited

  std::optional<std::uint64_t> remaining() const {
    if (!budget) return std::nullopt;
    return *budget - used;
  }
};

/// Query counter with an optional hard cap. try_consume() checks and
/// increments under one lock, so concurrent callers can never overshoot.
class QueryLedger {
 public:
  explicit QueryLedger(std::optional<std::uint64_t> budget = std::nullopt) : budget_(budget) {}

  /// Consumes one query; false (and no change) when the budget is spent.
  bool try_consume();
  LedgerSnapshot snapshot() const;

 private:
  mutable std::mutex mu_;
  std::uint64_t used_ = 0;
  std::optional<std::uint64_t> budget_;
};

/// Black-box similarity S(image, target). The only channel an attacker sees.
///
/// query() must be safe to call concurrently. Implementations count every
/// returned score against their ledger; failures never consume budget unless
/// the score was actually computed.
class SimilarityOracle {
 public:
  virtual ~SimilarityOracle() = default;

  /// Throws BudgetExhausted, UnknownTarget, DimensionError or a transport
  /// error for remote oracles.
  virtual double query(const ImageTensor& image, const TargetId& target) = 0;

  virtual LedgerSnapshot ledger() const = 0;

  /// Enrolled identities, when the oracle knows them. Empty means "unknown".
  virtual std::vector<TargetId> targets() const { return {}; }
};

/// Convenience base: validates, charges a private ledger, then calls score().
class LedgeredOracle : public SimilarityOracle {
 public:
  explicit LedgeredOracle(std::optional<std::uint64_t> budget) : ledger_(budget) {}

  double query(const ImageTensor& image, const TargetId& target) final;
  LedgerSnapshot ledger() const final { return ledger_.snapshot(); }

 protected:
  /// Throw UnknownTarget / DimensionError here; runs before the ledger is charged.
  virtual void validate(const ImageTensor&, const TargetId&) const {}
  virtual double score(const ImageTensor& image, const TargetId& target) const = 0;

 private:
  QueryLedger ledger_;
};

/// Cosine similarity a.b / (|a| |b|), clamped to [-1, 1].
/// Throws DimensionError on length mismatch and InvalidArgument on a zero vector.
double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Fixed random linear map standing in for a face-embedding network.
///
/// projection(i, j) = f32(normal_at(seed, streams::kProjection, i * d + j)).
/// With flip_concat the embedding is [P x ; P flip(x)].
class SyntheticEmbedder {
 public:
  SyntheticEmbedder(std::uint64_t seed, std::size_t embed_dim, std::uint32_t width,
                    std::uint32_t height, std::uint32_t channels, bool flip_concat);

  Eigen::VectorXd embed(const ImageTensor& image) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(projection_.rows()); }
  std::size_t output_dim() const noexcept { return flip_concat_ ? 2 * embed_dim() : embed_dim(); }
  bool flip_concat() const noexcept { return flip_concat_; }
  bool accepts(const ImageTensor& image) const noexcept {
    return image.width() == width_ && image.height() == height_ && image.channels() == channels_;
  }
  const Eigen::MatrixXd& projection() const noexcept { return projection_; }

 private:
  std::uint64_t seed_;
  std::uint32_t width_, height_, channels_;
  bool flip_concat_;
  Eigen::MatrixXd projection_;  // embed_dim x d, f32-exact values
};

/// query(img, t) = cosine(embed(img), embed(enrollment[t])).
class CosineOracle final : public LedgeredOracle {
 public:
  CosineOracle(std::shared_ptr<const SyntheticEmbedder> embedder,
               const std::map<TargetId, ImageTensor>& enrollment,
               std::optional<std::uint64_t> budget);

  std::vector<TargetId> targets() const override;
  const SyntheticEmbedder& embedder() const noexcept { return *embedder_; }

 protected:
  void validate(const ImageTensor& image, const TargetId& target) const override;
  double score(const ImageTensor& image, const TargetId& target) const override;

 private:
  std::shared_ptr<const SyntheticEmbedder> embedder_;
  std::map<TargetId, Eigen::VectorXd> enrolled_;
};

std::unique_ptr<SimilarityOracle> make_cosine_oracle(
    std::shared_ptr<const SyntheticEmbedder> embedder,
    const std::map<TargetId, ImageTensor>& enrollment, std::optional<std::uint64_t> budget);

/// Round half away from zero onto the grid {j * 2 / 2^bits} clipped to [-1, 1].
double quantize_score(double score, unsigned bits);

/// Degrades another oracle's scores; the ledger is the inner oracle's.
class QuantizedOracle final : public SimilarityOracle {
 public:
  QuantizedOracle(std::unique_ptr<SimilarityOracle> inner, unsigned bits);
  double query(const ImageTensor& image, const TargetId& target) override;
  LedgerSnapshot ledger() const override { return inner_->ledger(); }
  std::vector<TargetId> targets() const override { return inner_->targets(); }

 private:
  std::unique_ptr<SimilarityOracle> inner_;
  unsigned bits_;
};

/// Adds stddev * normal_at(seed, kScoreNoise, n) to the n-th returned score,
/// then clamps to [-1, 1]. stddev == 0 passes scores through untouched.
class NoisyOracle final : public SimilarityOracle {
 public:
  NoisyOracle(std::unique_ptr<SimilarityOracle> inner, double stddev, std::uint64_t seed);
  double query(const ImageTensor& image, const TargetId& target) override;
  LedgerSnapshot ledger() const override { return inner_->ledger(); }
  std::vector<TargetId> targets() const override { return inner_->targets(); }

 private:
  std::unique_ptr<SimilarityOracle> inner_;
  double stddev_;
  std::uint64_t seed_;
  std::atomic<std::uint64_t> counter_{0};
};

std::unique_ptr<SimilarityOracle> wrap_quantize(std::unique_ptr<SimilarityOracle> inner, unsigned bits);
std::unique_ptr<SimilarityOracle> wrap_noise(std::unique_ptr<SimilarityOracle> inner, double stddev,
                                             std::uint64_t seed);

}  // namespace eigenprobe
