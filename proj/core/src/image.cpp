#include "eigenprobe/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "eigenprobe/errors.hpp"

namespace eigenprobe {

ImageTensor::ImageTensor(std::uint32_t width, std::uint32_t height, std::uint32_t channels)
    : ImageTensor(width, height, channels,
                  std::vector<float>(static_cast<std::size_t>(width) * height * channels, 0.0f)) {}

ImageTensor::ImageTensor(std::uint32_t width, std::uint32_t height, std::uint32_t channels,
                         std::vector<float> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
  if (channels != 1 && channels != 3) {
    throw InvalidArgument("image channels must be 1 or 3, got " + std::to_string(channels));
  }
  if (width == 0 || height == 0) throw InvalidArgument("image must be non-empty");
  const std::size_t expected = static_cast<std::size_t>(width) * height * channels;
  if (pixels_.size() != expected) {
    throw DimensionError("pixel buffer has " + std::to_string(pixels_.size()) +
                         " values, expected " + std::to_string(expected));
  }
  for (float v : pixels_) {
    if (!std::isfinite(v)) throw InvalidArgument("image contains a non-finite pixel");
  }
}

ImageTensor horizontal_flip(const ImageTensor& image) {
  ImageTensor out = image;
  const auto w = image.width();
  for (std::uint32_t y = 0; y < image.height(); ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      for (std::uint32_t ch = 0; ch < image.channels(); ++ch) {
        out.at(w - 1 - x, y, ch) = image.at(x, y, ch);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> render_8bit(const ImageTensor& image) {
  std::vector<std::uint8_t> bytes(image.size());
  auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const float v = std::clamp(px[i], 0.0f, 1.0f);
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return bytes;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp, png_const_charp msg) {
  throw FormatError(std::string("png: ") + msg);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

ImageTensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FormatError("cannot open " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                           png_warning_handler);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp& p;
    png_infop& i;
    ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
  } guard{png, info};
  if (!info) throw FormatError("png_create_info_struct failed");

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    throw FormatError(path.string() + ": unsupported channel layout");
  }

  const std::size_t stride = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> raw(stride * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  std::vector<float> pixels(static_cast<std::size_t>(width) * height * channels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(width) * channels; ++i) {
      pixels[y * width * channels + i] = static_cast<float>(raw[y * stride + i]) / 255.0f;
    }
  }
  return ImageTensor(width, height, channels, std::move(pixels));
}

void write_png(const ImageTensor& image, const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw FormatError("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                            png_warning_handler);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp& p;
    png_infop& i;
    ~Guard() { png_destroy_write_struct(&p, &i); }
  } guard{png, info};
  if (!info) throw FormatError("png_create_info_struct failed");

  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8,
               image.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  auto bytes = render_8bit(image);
  const std::size_t stride = static_cast<std::size_t>(image.width()) * image.channels();
  for (std::size_t y = 0; y < image.height(); ++y) {
    png_write_row(png, bytes.data() + y * stride);
  }
  png_write_end(png, nullptr);
}

ImageTensor resize_bilinear(const ImageTensor& image, std::uint32_t width, std::uint32_t height) {
  if (width == image.width() && height == image.height()) return image;
  ImageTensor out(width, height, image.channels());
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  const auto clampi = [](double v, std::uint32_t hi) {
    return static_cast<std::uint32_t>(std::clamp(v, 0.0, static_cast<double>(hi - 1)));
  };
  for (std::uint32_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const auto y0 = clampi(std::floor(fy), image.height());
    const auto y1 = clampi(y0 + 1.0, image.height());
    const double wy = fy - y0;
    for (std::uint32_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const auto x0 = clampi(std::floor(fx), image.width());
      const auto x1 = clampi(x0 + 1.0, image.width());
      const double wx = fx - x0;
      for (std::uint32_t ch = 0; ch < image.channels(); ++ch) {
        const double top = (1 - wx) * image.at(x0, y0, ch) + wx * image.at(x1, y0, ch);
        const double bottom = (1 - wx) * image.at(x0, y1, ch) + wx * image.at(x1, y1, ch);
        out.at(x, y, ch) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

ImageTensor convert_channels(const ImageTensor& image, std::uint32_t channels) {
  if (channels == image.channels()) return image;
  ImageTensor out(image.width(), image.height(), channels);
  for (std::uint32_t y = 0; y < image.height(); ++y) {
    for (std::uint32_t x = 0; x < image.width(); ++x) {
      if (channels == 3) {
        const float g = image.at(x, y, 0);
        for (std::uint32_t ch = 0; ch < 3; ++ch) out.at(x, y, ch) = g;
      } else {
        out.at(x, y, 0) = (image.at(x, y, 0) + image.at(x, y, 1) + image.at(x, y, 2)) / 3.0f;
      }
    }
  }
  return out;
}

}  // namespace eigenprobe
