#include "eigenprobe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eigenprobe/errors.hpp"
#include "eigenprobe/prng.hpp"

namespace eigenprobe {

SyntheticFaceModel::SyntheticFaceModel(Params params) : params_(params) {
  if (params_.width == 0 || params_.height == 0) throw InvalidArgument("face model needs a non-empty shape");
  if (params_.channels != 1 && params_.channels != 3) throw InvalidArgument("channels must be 1 or 3");
  if (!(params_.amplitude >= 0.0) || !(params_.pixel_noise >= 0.0)) {
    throw InvalidArgument("amplitude and pixel noise must be >= 0");
  }
  const auto w = params_.width, h = params_.height, c = params_.channels;
  const std::size_t d = static_cast<std::size_t>(w) * h * c;
  const double scale = std::max(w, h);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  template_.resize(d);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      const double xs = x / scale - 0.5, ys = y / scale - 0.45;
      const double v = 0.45 + 0.2 * std::exp(-(xs * xs + ys * ys) / 0.08);
      for (std::uint32_t ch = 0; ch < c; ++ch) template_[(static_cast<std::size_t>(y) * w + x) * c + ch] = static_cast<float>(v);
    }
  }

  // Per pattern: fx, fy, two phases and c color weights.
  const std::uint64_t per_pattern = 4 + c;
  patterns_.resize(params_.latent_dim);
  for (std::size_t j = 0; j < params_.latent_dim; ++j) {
    const std::uint64_t base = j * per_pattern;
    const double max_freq = 1.0 + static_cast<double>(j / 8);
    const double fx = 1.0 + std::floor(uniform_at(params_.seed, streams::kFacePatterns, base) * max_freq);
    const double fy = 1.0 + std::floor(uniform_at(params_.seed, streams::kFacePatterns, base + 1) * max_freq);
    const double px = two_pi * uniform_at(params_.seed, streams::kFacePatterns, base + 2);
    const double py = two_pi * uniform_at(params_.seed, streams::kFacePatterns, base + 3);
    std::vector<double> color(c);
    for (std::uint32_t ch = 0; ch < c; ++ch) color[ch] = normal_at(params_.seed, streams::kFacePatterns, base + 4 + ch);

    std::vector<double> v(d);
    double norm2 = 0.0;
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x) {
        const double g = std::cos(two_pi * fx * (x / scale) + px) * std::cos(two_pi * fy * (y / scale) + py);
        for (std::uint32_t ch = 0; ch < c; ++ch) {
          const double e = g * color[ch];
          v[(static_cast<std::size_t>(y) * w + x) * c + ch] = e;
          norm2 += e * e;
        }
      }
    }
    // Unit RMS pixel amplitude of 0.5 regardless of resolution.
    const double s = norm2 > 0.0 ? 0.5 * std::sqrt(static_cast<double>(d) / norm2) : 0.0;
    patterns_[j].resize(d);
    for (std::size_t i = 0; i < d; ++i) patterns_[j][i] = static_cast<float>(v[i] * s);
  }
}

ImageTensor SyntheticFaceModel::render(const std::vector<double>& z, std::uint64_t noise_stream,
                                       std::uint64_t noise_base) const {
  const std::size_t d = template_.size();
  std::vector<double> acc(template_.begin(), template_.end());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double a = z[j] * params_.amplitude / std::sqrt(1.0 + static_cast<double>(j));
    const auto& p = patterns_[j];
    for (std::size_t i = 0; i < d; ++i) acc[i] += a * p[i];
  }
  std::vector<float> pixels(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double noise =
        params_.pixel_noise > 0.0 ? params_.pixel_noise * normal_at(params_.seed, noise_stream, noise_base + i) : 0.0;
    pixels[i] = static_cast<float>(acc[i] + noise);
  }
  return ImageTensor(params_.width, params_.height, params_.channels, std::move(pixels));
}

ImageTensor SyntheticFaceModel::sample(std::uint64_t stream, std::uint64_t index) const {
  const std::size_t latent = params_.latent_dim;
  const std::uint64_t base = index * (latent + template_.size());
  std::vector<double> z(latent);
  for (std::size_t j = 0; j < latent; ++j) z[j] = normal_at(params_.seed, stream, base + j);
  return render(z, stream, base + latent);
}

ImageTensor SyntheticFaceModel::view(std::uint64_t identity, std::uint32_t view, double jitter) const {
  const std::size_t latent = params_.latent_dim;
  const std::uint64_t block = latent + template_.size();
  const std::uint64_t base = identity * block;
  const std::uint64_t view_base = ((identity << 16) | view) * block;
  std::vector<double> z(latent);
  for (std::size_t j = 0; j < latent; ++j) {
    z[j] = normal_at(params_.seed, streams::kTargets, base + j) +
           jitter * normal_at(params_.seed, streams::kFaceViews, view_base + j);
  }
  return render(z, streams::kFaceViews, view_base + latent);
}

std::vector<ImageTensor> SyntheticFaceModel::corpus(std::size_t count) const {
  std::vector<ImageTensor> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) images.push_back(sample(streams::kCorpus, i));
  return images;
}

ImageTensor SyntheticFaceModel::target(std::uint64_t index) const { return sample(streams::kTargets, index); }

}  // namespace eigenprobe
