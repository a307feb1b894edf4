#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eigenprobe/image.hpp"

namespace eigenprobe {

/// Coordinates in a fitted eigenface subspace. Unit variance per axis over
/// the training set.
using LatentCoords = Eigen::VectorXd;

/// Image geometry recorded with a basis.
struct ImageShape {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;

  std::size_t dim() const noexcept {
    return static_cast<std::size_t>(width) * height * channels;
  }
  bool matches(const ImageTensor& image) const noexcept {
    return image.width() == width && image.height() == height && image.channels() == channels;
  }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// PCA subspace: image = mean + sum_i c_i * stds[i] * components.row(i).
///
/// All stored values are exactly representable as f32 so that the on-disk
/// format round-trips bit for bit; arithmetic is carried out in double.
struct EigenBasis {
  ImageShape shape;
  Eigen::VectorXd mean;          // d
  Eigen::MatrixXd components;    // k x d, orthonormal rows
  Eigen::VectorXd component_stds;  // k, positive, nonincreasing

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  std::size_t rank() const noexcept { return static_cast<std::size_t>(components.rows()); }
};

bool operator==(const EigenBasis& a, const EigenBasis& b);

/// Fits a rank-`rank` basis to `images` (all the same shape).
///
/// Uses a thin SVD of the centered M x d data matrix; when M < d the
/// eigendecomposition of the M x M Gram matrix is used instead. Component
/// signs are fixed so each component's largest-magnitude entry is positive,
/// and component_stds[i] = sigma_i / sqrt(M - 1).
///
/// Throws DimensionError on shape mismatch, InvalidArgument if rank is not in
/// [1, min(d, M-1)] and DegenerateInput if a retained direction has zero
/// variance.
EigenBasis fit_pca(std::span<const ImageTensor> images, std::size_t rank);

/// Keeps the first `rank` components.
EigenBasis truncate(const EigenBasis& basis, std::size_t rank);

/// Fraction of the centered energy of `images` captured by the basis,
/// 1 - sum ||x - reconstruct(x)||^2 / sum ||x - mean||^2.
double retained_variance(const EigenBasis& basis, std::span<const ImageTensor> images);

/// Mean squared per-pixel error of synthesize(project(x)) over `images`.
double reconstruction_mse(const EigenBasis& basis, std::span<const ImageTensor> images);

LatentCoords project(const EigenBasis& basis, const ImageTensor& image);
ImageTensor synthesize(const EigenBasis& basis, const LatentCoords& coords);

/// Flat double view of an image, for callers doing their own linear algebra.
Eigen::VectorXd flatten(const ImageTensor& image);
ImageTensor unflatten(const ImageShape& shape, const Eigen::Ref<const Eigen::VectorXd>& values);

/// Binary basis file: "EIGBASIS", u32 version (1), u32 width, u32 height,
/// u32 channels, u64 rank, then mean (d f32), stds (k f32) and components
/// (k x d f32, row-major). Little-endian throughout.
inline constexpr std::uint32_t kBasisFormatVersion = 1;

void save_basis(const EigenBasis& basis, const std::filesystem::path& path);
EigenBasis load_basis(const std::filesystem::path& path);

/// Raw little-endian f32 array of the coordinates; length is file size / 4.
void save_coords(const LatentCoords& coords, const std::filesystem::path& path);
LatentCoords load_coords(const std::filesystem::path& path);

}  // namespace eigenprobe
