#include "eigenprobe/eigenspace.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "eigenprobe/errors.hpp"

namespace eigenprobe {

namespace {

// Singular values at or below this fraction of the largest are treated as zero.
constexpr double kDegenerateRelTol = 1e-6;

constexpr char kBasisMagic[8] = {'E', 'I', 'G', 'B', 'A', 'S', 'I', 'S'};

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void check_shape(const EigenBasis& basis, const ImageTensor& image) {
  if (!basis.shape.matches(image)) {
    throw DimensionError("image is " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) + "x" + std::to_string(image.channels()) +
                         ", basis expects " + std::to_string(basis.shape.width) + "x" +
                         std::to_string(basis.shape.height) + "x" +
                         std::to_string(basis.shape.channels));
  }
}

// Little-endian encoders; portable regardless of host byte order.
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated while reading " + field);
    }
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f32(const char* field) {
    const float f = std::bit_cast<float>(u32(field));
    if (!std::isfinite(f)) throw FormatError(what_ + ": non-finite value in " + field);
    return f;
  }
  std::string_view raw(std::size_t n, const char* field) {
    need(n, field);
    std::string_view v(bytes_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace

bool operator==(const EigenBasis& a, const EigenBasis& b) {
  return a.shape == b.shape && a.mean.size() == b.mean.size() &&
         a.components.rows() == b.components.rows() &&
         a.components.cols() == b.components.cols() && a.mean == b.mean &&
         a.components == b.components && a.component_stds == b.component_stds;
}

Eigen::VectorXd flatten(const ImageTensor& image) {
  auto px = image.pixels();
  Eigen::VectorXd v(static_cast<Eigen::Index>(px.size()));
  for (std::size_t i = 0; i < px.size(); ++i) v[static_cast<Eigen::Index>(i)] = px[i];
  return v;
}

ImageTensor unflatten(const ImageShape& shape, const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (static_cast<std::size_t>(values.size()) != shape.dim()) {
    throw DimensionError("vector length " + std::to_string(values.size()) + " does not match image dim " +
                         std::to_string(shape.dim()));
  }
  std::vector<float> px(shape.dim());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(values[static_cast<Eigen::Index>(i)]);
  return ImageTensor(shape.width, shape.height, shape.channels, std::move(px));
}

EigenBasis fit_pca(std::span<const ImageTensor> images, std::size_t rank) {
  if (images.size() < 2) throw InvalidArgument("fit_pca needs at least 2 images");
  const ImageTensor& first = images.front();
  const ImageShape shape{first.width(), first.height(), first.channels()};
  for (std::size_t j = 1; j < images.size(); ++j) {
    if (!shape.matches(images[j])) {
      throw DimensionError("image " + std::to_string(j) + " differs in shape from image 0");
    }
  }
  const auto m = static_cast<Eigen::Index>(images.size());
  const auto d = static_cast<Eigen::Index>(shape.dim());
  const std::size_t max_rank = std::min<std::size_t>(shape.dim(), images.size() - 1);
  if (rank < 1 || rank > max_rank) {
    throw InvalidArgument("rank " + std::to_string(rank) + " outside [1, " + std::to_string(max_rank) + "]");
  }
  const auto k = static_cast<Eigen::Index>(rank);

  Eigen::MatrixXd data(m, d);
  for (Eigen::Index j = 0; j < m; ++j) data.row(j) = flatten(images[static_cast<std::size_t>(j)]).transpose();
  const Eigen::VectorXd mean = data.colwise().mean().transpose();
  data.rowwise() -= mean.transpose();

  Eigen::VectorXd singular(k);
  Eigen::MatrixXd components(k, d);
  if (m < d) {
    const Eigen::MatrixXd gram = data * data.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw Error("eigendecomposition of the Gram matrix failed");
    // Eigenvalues ascend; the leading components are at the end.
    const double top = std::sqrt(std::max(eig.eigenvalues()[m - 1], 0.0));
    for (Eigen::Index i = 0; i < k; ++i) {
      const Eigen::Index col = m - 1 - i;
      const double s = std::sqrt(std::max(eig.eigenvalues()[col], 0.0));
      if (s <= kDegenerateRelTol * top || s == 0.0) {
        throw DegenerateInput("PCA component " + std::to_string(i) + " has zero variance",
                              static_cast<std::size_t>(i));
      }
      singular[i] = s;
      components.row(i) = (data.transpose() * eig.eigenvectors().col(col)).transpose() / s;
    }
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    for (Eigen::Index i = 0; i < k; ++i) {
      if (sv[i] <= kDegenerateRelTol * sv[0] || sv[i] == 0.0) {
        throw DegenerateInput("PCA component " + std::to_string(i) + " has zero variance",
                              static_cast<std::size_t>(i));
      }
      singular[i] = sv[i];
      components.row(i) = svd.matrixV().col(i).transpose();
    }
  }

  EigenBasis basis;
  basis.shape = shape;
  basis.mean = mean.unaryExpr(&round_to_f32);
  basis.component_stds.resize(k);
  const double denom = std::sqrt(static_cast<double>(m - 1));
  for (Eigen::Index i = 0; i < k; ++i) {
    auto row = components.row(i);
    Eigen::Index argmax = 0;
    row.cwiseAbs().maxCoeff(&argmax);
    if (row[argmax] < 0) row = -row;
    basis.component_stds[i] = round_to_f32(singular[i] / denom);
  }
  basis.components = components.unaryExpr(&round_to_f32);
  return basis;
}

EigenBasis truncate(const EigenBasis& basis, std::size_t rank) {
  if (rank < 1 || rank > basis.rank()) {
    throw InvalidArgument("cannot truncate rank " + std::to_string(basis.rank()) + " basis to " +
                          std::to_string(rank));
  }
  const auto k = static_cast<Eigen::Index>(rank);
  EigenBasis out;
  out.shape = basis.shape;
  out.mean = basis.mean;
  out.components = basis.components.topRows(k);
  out.component_stds = basis.component_stds.head(k);
  return out;
}

LatentCoords project(const EigenBasis& basis, const ImageTensor& image) {
  check_shape(basis, image);
  const Eigen::VectorXd centered = flatten(image) - basis.mean;
  return (basis.components * centered).cwiseQuotient(basis.component_stds);
}

ImageTensor synthesize(const EigenBasis& basis, const LatentCoords& coords) {
  if (static_cast<std::size_t>(coords.size()) != basis.rank()) {
    throw DimensionError("coords have length " + std::to_string(coords.size()) + ", basis rank is " +
                         std::to_string(basis.rank()));
  }
  const Eigen::VectorXd flat =
      basis.mean + basis.components.transpose() * coords.cwiseProduct(basis.component_stds);
  return unflatten(basis.shape, flat);
}

double reconstruction_mse(const EigenBasis& basis, std::span<const ImageTensor> images) {
  if (images.empty()) return 0.0;
  double total = 0.0;
  for (const auto& img : images) {
    const Eigen::VectorXd x = flatten(img);
    const Eigen::VectorXd centered = x - basis.mean;
    const Eigen::VectorXd recon = basis.components.transpose() * (basis.components * centered);
    total += (centered - recon).squaredNorm();
  }
  return total / (static_cast<double>(images.size()) * static_cast<double>(basis.dim()));
}

double retained_variance(const EigenBasis& basis, std::span<const ImageTensor> images) {
  double energy = 0.0;
  for (const auto& img : images) {
    check_shape(basis, img);
    energy += (flatten(img) - basis.mean).squaredNorm();
  }
  if (energy == 0.0) return 1.0;
  const double residual =
      reconstruction_mse(basis, images) * static_cast<double>(images.size()) * static_cast<double>(basis.dim());
  return 1.0 - residual / energy;
}

void save_basis(const EigenBasis& basis, const std::filesystem::path& path) {
  const std::size_t d = basis.dim();
  const std::size_t k = basis.rank();
  if (d != basis.shape.dim() || static_cast<std::size_t>(basis.components.cols()) != d ||
      static_cast<std::size_t>(basis.component_stds.size()) != k) {
    throw DimensionError("basis fields are inconsistent");
  }
  std::string out;
  out.reserve(8 + 4 * 4 + 8 + 4 * (d + k + k * d));
  out.append(kBasisMagic, sizeof(kBasisMagic));
  put_u32(out, kBasisFormatVersion);
  put_u32(out, basis.shape.width);
  put_u32(out, basis.shape.height);
  put_u32(out, basis.shape.channels);
  put_u64(out, k);
  for (Eigen::Index i = 0; i < basis.mean.size(); ++i) put_f32(out, basis.mean[i]);
  for (Eigen::Index i = 0; i < basis.component_stds.size(); ++i) put_f32(out, basis.component_stds[i]);
  for (Eigen::Index r = 0; r < basis.components.rows(); ++r) {
    for (Eigen::Index c = 0; c < basis.components.cols(); ++c) put_f32(out, basis.components(r, c));
  }
  spit(path, out);
}

EigenBasis load_basis(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  Reader in(bytes, path.string());
  if (in.raw(sizeof(kBasisMagic), "magic") != std::string_view(kBasisMagic, sizeof(kBasisMagic))) {
    throw FormatError(path.string() + ": bad magic, not a basis file");
  }
  const auto version = in.u32("version");
  if (version != kBasisFormatVersion) {
    throw FormatError(path.string() + ": unsupported basis format version " + std::to_string(version));
  }
  EigenBasis basis;
  basis.shape.width = in.u32("width");
  basis.shape.height = in.u32("height");
  basis.shape.channels = in.u32("channels");
  const auto rank = in.u64("rank");
  const std::size_t d = basis.shape.dim();
  if ((basis.shape.channels != 1 && basis.shape.channels != 3) || basis.shape.width == 0 ||
      basis.shape.height == 0 || basis.shape.width > 65536 || basis.shape.height > 65536) {
    throw FormatError(path.string() + ": invalid image shape in header");
  }
  if (rank == 0 || rank > d) throw FormatError(path.string() + ": invalid header dimensions");
  // Checked before allocating so a corrupt rank cannot request gigabytes.
  if (in.remaining() / 4 < d + rank + rank * d) {
    throw FormatError(path.string() + ": truncated payload (header promises rank " +
                      std::to_string(rank) + ")");
  }
  const auto kd = static_cast<Eigen::Index>(d);
  const auto kk = static_cast<Eigen::Index>(rank);
  basis.mean.resize(kd);
  for (Eigen::Index i = 0; i < kd; ++i) basis.mean[i] = in.f32("mean");
  basis.component_stds.resize(kk);
  for (Eigen::Index i = 0; i < kk; ++i) basis.component_stds[i] = in.f32("component_stds");
  basis.components.resize(kk, kd);
  for (Eigen::Index r = 0; r < kk; ++r) {
    for (Eigen::Index c = 0; c < kd; ++c) basis.components(r, c) = in.f32("components");
  }
  if (in.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after components");
  return basis;
}

void save_coords(const LatentCoords& coords, const std::filesystem::path& path) {
  std::string out;
  out.reserve(static_cast<std::size_t>(coords.size()) * 4);
  for (Eigen::Index i = 0; i < coords.size(); ++i) put_f32(out, coords[i]);
  spit(path, out);
}

LatentCoords load_coords(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() % 4 != 0) throw FormatError(path.string() + ": length is not a multiple of 4");
  Reader in(bytes, path.string());
  LatentCoords coords(static_cast<Eigen::Index>(bytes.size() / 4));
  for (Eigen::Index i = 0; i < coords.size(); ++i) coords[i] = in.f32("coords");
  return coords;
}

}  // namespace eigenprobe
