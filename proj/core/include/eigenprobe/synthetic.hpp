#pragma once

#include <cstdint>
#include <vector>

#include "eigenprobe/image.hpp"

namespace eigenprobe {

/// Low-rank generative model of face-like images for desk-scale experiments.
///
/// image = template + sum_j z_j * a_j * pattern_j + noise, where the template
/// is a bright oval on a gray field, pattern_j is a colored separable cosine
/// grating whose frequency grows with j, a_j = amplitude / sqrt(1 + j),
/// z ~ N(0, I) and noise ~ N(0, pixel_noise^2). Everything is a pure function
/// of (params, stream, index).
class SyntheticFaceModel {
 public:
  struct Params {
    std::uint32_t width = 16;
    std::uint32_t height = 16;
    std::uint32_t channels = 3;
    std::size_t latent_dim = 96;
    double amplitude = 0.4;
    double pixel_noise = 0.01;
    std::uint64_t seed = 0;
  };

  explicit SyntheticFaceModel(Params params);

  const Params& params() const noexcept { return params_; }

  /// Image number `index` of `stream`.
  ImageTensor sample(std::uint64_t stream, std::uint64_t index) const;

  /// Training images 0..count-1 of streams::kCorpus.
  std::vector<ImageTensor> corpus(std::size_t count) const;

  /// Held-out identity number `index` (streams::kTargets).
  ImageTensor target(std::uint64_t index) const;

  /// Another photo of held-out identity `identity`: its latent plus
  /// jitter * N(0, I), with fresh pixel noise (streams::kFaceViews).
  ImageTensor view(std::uint64_t identity, std::uint32_t view, double jitter) const;

 private:
  ImageTensor render(const std::vector<double>& z, std::uint64_t noise_stream, std::uint64_t noise_base) const;

  Params params_;
  std::vector<float> template_;
  std::vector<std::vector<float>> patterns_;
};

}  // namespace eigenprobe
