#include "eigenprobe/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "eigenprobe/eigenspace.hpp"
#include "eigenprobe/errors.hpp"
#include "eigenprobe/prng.hpp"

namespace eigenprobe {

TargetId::TargetId(std::string id) : id_(std::move(id)) {
  if (id_.empty()) throw InvalidArgument("target id must be non-empty");
}

bool QueryLedger::try_consume() {
  std::lock_guard lock(mu_);
  if (budget_ && used_ >= *budget_) return false;
  ++used_;
  return true;
}

LedgerSnapshot QueryLedger::snapshot() const {
  std::lock_guard lock(mu_);
  return {used_, budget_};
}

double LedgeredOracle::query(const ImageTensor& image, const TargetId& target) {
  validate(image, target);
  if (!ledger_.try_consume()) {
    const auto snap = ledger_.snapshot();
    throw BudgetExhausted("query budget of " + std::to_string(snap.budget.value_or(0)) + " exhausted");
  }
  return score(image, target);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine of vectors with lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw InvalidArgument("cosine of a zero vector is undefined");
  // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): gives exactly 1 for a == b.
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return cosine(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

SyntheticEmbedder::SyntheticEmbedder(std::uint64_t seed, std::size_t embed_dim, std::uint32_t width,
                                     std::uint32_t height, std::uint32_t channels, bool flip_concat)
    : seed_(seed), width_(width), height_(height), channels_(channels), flip_concat_(flip_concat) {
  if (embed_dim == 0) throw InvalidArgument("embed_dim must be positive");
  const std::size_t d = static_cast<std::size_t>(width) * height * channels;
  if (d == 0) throw InvalidArgument("embedder image shape must be non-empty");
  projection_.resize(static_cast<Eigen::Index>(embed_dim), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < embed_dim; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const float v = static_cast<float>(normal_at(seed, streams::kProjection, i * d + j));
      projection_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
}

Eigen::VectorXd SyntheticEmbedder::embed(const ImageTensor& image) const {
  if (!accepts(image)) {
    throw DimensionError("embedder expects " + std::to_string(width_) + "x" + std::to_string(height_) +
                         "x" + std::to_string(channels_) + " images");
  }
  if (!flip_concat_) return projection_ * flatten(image);
  const auto rows = projection_.rows();
  Eigen::VectorXd out(2 * rows);
  out.head(rows).noalias() = projection_ * flatten(image);
  out.tail(rows).noalias() = projection_ * flatten(horizontal_flip(image));
  return out;
}

CosineOracle::CosineOracle(std::shared_ptr<const SyntheticEmbedder> embedder,
                           const std::map<TargetId, ImageTensor>& enrollment,
                           std::optional<std::uint64_t> budget)
    : LedgeredOracle(budget), embedder_(std::move(embedder)) {
  if (!embedder_) throw InvalidArgument("cosine oracle needs an embedder");
  if (enrollment.empty()) throw InvalidArgument("enrollment must be non-empty");
  for (const auto& [id, image] : enrollment) {
    auto e = embedder_->embed(image);
    if (e.squaredNorm() == 0.0) {
      throw InvalidArgument("enrolled image for '" + id.str() + "' embeds to the zero vector");
    }
    enrolled_.emplace(id, std::move(e));
  }
}

std::vector<TargetId> CosineOracle::targets() const {
  std::vector<TargetId> ids;
  ids.reserve(enrolled_.size());
  for (const auto& [id, _] : enrolled_) ids.push_back(id);
  return ids;
}

void CosineOracle::validate(const ImageTensor& image, const TargetId& target) const {
  if (!enrolled_.contains(target)) throw UnknownTarget("unknown target '" + target.str() + "'");
  if (!embedder_->accepts(image)) throw DimensionError("probe image shape does not match the embedder");
}

double CosineOracle::score(const ImageTensor& image, const TargetId& target) const {
  return cosine(embedder_->embed(image), enrolled_.at(target));
}

std::unique_ptr<SimilarityOracle> make_cosine_oracle(
    std::shared_ptr<const SyntheticEmbedder> embedder,
    const std::map<TargetId, ImageTensor>& enrollment, std::optional<std::uint64_t> budget) {
  return std::make_unique<CosineOracle>(std::move(embedder), enrollment, budget);
}

double quantize_score(double score, unsigned bits) {
  if (bits == 0) throw InvalidArgument("quantization needs at least 1 bit");
  const double step = std::ldexp(2.0, -static_cast<int>(bits));
  // std::round rounds halves away from zero.
  const double q = std::round(score / step) * step;
  return std::clamp(q, -1.0, 1.0);
}

QuantizedOracle::QuantizedOracle(std::unique_ptr<SimilarityOracle> inner, unsigned bits)
    : inner_(std::move(inner)), bits_(bits) {
  if (!inner_) throw InvalidArgument("wrapper needs an inner oracle");
  if (bits_ == 0) throw InvalidArgument("quantization needs at least 1 bit");
}

double QuantizedOracle::query(const ImageTensor& image, const TargetId& target) {
  return quantize_score(inner_->query(image, target), bits_);
}

NoisyOracle::NoisyOracle(std::unique_ptr<SimilarityOracle> inner, double stddev, std::uint64_t seed)
    : inner_(std::move(inner)), stddev_(stddev), seed_(seed) {
  if (!inner_) throw InvalidArgument("wrapper needs an inner oracle");
  if (!(stddev_ >= 0.0) || !std::isfinite(stddev_)) throw InvalidArgument("noise stddev must be >= 0");
}

double NoisyOracle::query(const ImageTensor& image, const TargetId& target) {
  const double s = inner_->query(image, target);
  if (stddev_ == 0.0) return s;
  const auto n = counter_.fetch_add(1, std::memory_order_relaxed);
  return std::clamp(s + stddev_ * normal_at(seed_, streams::kScoreNoise, n), -1.0, 1.0);
}

std::unique_ptr<SimilarityOracle> wrap_quantize(std::unique_ptr<SimilarityOracle> inner, unsigned bits) {
  return std::make_unique<QuantizedOracle>(std::move(inner), bits);
}

std::unique_ptr<SimilarityOracle> wrap_noise(std::unique_ptr<SimilarityOracle> inner, double stddev,
                                             std::uint64_t seed) {
  return std::make_unique<NoisyOracle>(std::move(inner), stddev, seed);
}

}  // namespace eigenprobe
