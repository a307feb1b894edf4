#pragma once

#include <array>
#include <cstdint>

namespace eigenprobe {

/// Philox4x32-10 (Salmon et al., SC'11), the counter-based generator shipped
/// by Random123, cuRAND, NumPy and JAX. A block is a pure function of a
/// 128-bit counter and a 64-bit key.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter counter, Key key) noexcept;
};

/// Well-known stream identifiers. Every consumer of randomness draws from its
/// own stream so that changing one component never shifts another's numbers.
namespace streams {
inline constexpr std::uint64_t kProjection = 1;
inline constexpr std::uint64_t kMainPhase = 2;
inline constexpr std::uint64_t kScoreNoise = 3;
inline constexpr std::uint64_t kCorpus = 4;
inline constexpr std::uint64_t kTargets = 5;
inline constexpr std::uint64_t kFacePatterns = 6;
inline constexpr std::uint64_t kFaceViews = 7;
inline constexpr std::uint64_t kRestartBase = 0x100;  // restart r uses kRestartBase + r
}  // namespace streams

/// Uniform in (0, 1) from the 64-bit word (hi << 32 | lo): ((w >> 12) + 0.5) * 2^-52.
double uniform_open01(std::uint32_t lo, std::uint32_t hi) noexcept;

/// Standard normal variate number `index` of stream `stream` under `seed`.
///
/// The Philox block at key = (seed & 0xffffffff, seed >> 32) and counter =
/// (index lo, index hi, stream lo, stream hi) yields four words w0..w3.
/// u1 = uniform_open01(w0, w1), u2 = uniform_open01(w2, w3) and the result is
/// the cosine branch of Box-Muller, sqrt(-2 ln u1) * cos(2 pi u2), in double.
double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;

/// Uniform in (0, 1): uniform_open01(w0, w1) of the same block normal_at uses.
double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;

/// Sequential cursor over one (seed, stream) pair.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}

  double next() noexcept { return normal_at(seed_, stream_, index_++); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return index_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

}  // namespace eigenprobe
