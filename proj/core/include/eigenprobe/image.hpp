#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace eigenprobe {

/// Row-major, channel-interleaved image with nominal pixel range [0, 1].
///
/// Values outside [0, 1] are legal: synthesized probes are not clamped until
/// they are rendered to disk.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::uint32_t width, std::uint32_t height, std::uint32_t channels);
  /// Throws DimensionError if pixels.size() != width*height*channels and
  /// InvalidArgument if any value is not finite or channels is not 1 or 3.
  ImageTensor(std::uint32_t width, std::uint32_t height, std::uint32_t channels,
              std::vector<float> pixels);

  std::uint32_t width() const noexcept { return width_; }
  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }

  std::span<const float> pixels() const noexcept { return pixels_; }
  std::span<float> pixels() noexcept { return pixels_; }

  float& at(std::uint32_t x, std::uint32_t y, std::uint32_t ch) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + ch];
  }
  float at(std::uint32_t x, std::uint32_t y, std::uint32_t ch) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + ch];
  }

  bool same_shape(const ImageTensor& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  std::uint32_t channels_ = 0;
  std::vector<float> pixels_;
};

/// Mirror left-right: pixel (x, y, ch) moves to (width-1-x, y, ch).
ImageTensor horizontal_flip(const ImageTensor& image);

/// Clamp to [0, 1] and quantize to 8 bits per channel (round to nearest).
std::vector<std::uint8_t> render_8bit(const ImageTensor& image);

/// Reads an 8-bit PNG. Gray and RGB are kept as 1 and 3 channels; alpha is
/// dropped; palettes are expanded to RGB. Pixel values are v/255.
ImageTensor read_png(const std::filesystem::path& path);

/// Writes the clamp-and-quantize render of `image` as an 8-bit PNG.
void write_png(const ImageTensor& image, const std::filesystem::path& path);

/// Bilinear resample (pixel-center aligned) used to bring a corpus to the fit
/// resolution. Channel count is preserved.
ImageTensor resize_bilinear(const ImageTensor& image, std::uint32_t width, std::uint32_t height);

/// 1 -> 3 replicates gray; 3 -> 1 averages the channels.
ImageTensor convert_channels(const ImageTensor& image, std::uint32_t channels);

}  // namespace eigenprobe
