#include "eigenprobe/prng.hpp"

#include <cmath>
#include <numbers>

namespace eigenprobe {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53;
constexpr std::uint32_t kMul1 = 0xCD9E8D57;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

double uniform_open01(std::uint32_t lo, std::uint32_t hi) noexcept {
  const std::uint64_t word = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(word >> 12) + 0.5) * 0x1.0p-52;
}

namespace {

Philox4x32::Counter block_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index),
                                static_cast<std::uint32_t>(index >> 32),
                                static_cast<std::uint32_t>(stream),
                                static_cast<std::uint32_t>(stream >> 32)};
  return Philox4x32::block(ctr, key);
}

}  // namespace

double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const auto w = block_at(seed, stream, index);
  return uniform_open01(w[0], w[1]);
}

double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const auto w = block_at(seed, stream, index);
  const double u1 = uniform_open01(w[0], w[1]);
  const double u2 = uniform_open01(w[2], w[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace eigenprobe
