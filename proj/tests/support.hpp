#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "eigenprobe/eigenspace.hpp"
#include "eigenprobe/oracle.hpp"

namespace testing {

using namespace eigenprobe;

/// Random basis with orthonormal rows, positive decreasing stds and a random
/// mean. Not fitted to anything; handy when the test wants exact control.
inline EigenBasis random_basis(std::size_t k, ImageShape shape, std::uint32_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n;
  const std::size_t d = shape.dim();
  Eigen::MatrixXd g(d, k);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(gen);
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(d, k);
  EigenBasis b;
  b.shape = shape;
  b.components = q.transpose();
  b.component_stds.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) b.component_stds[static_cast<Eigen::Index>(i)] = 0.2 / (1.0 + 0.1 * i);
  b.mean = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 0.5);
  for (Eigen::Index i = 0; i < b.mean.size(); ++i) b.mean[i] += 0.05 * n(gen);
  return b;
}

/// Oracle that sees the probe's latent coordinates under `basis` and scores
/// them with `f`. Unlimited budget unless given.
class LatentOracle final : public LedgeredOracle {
 public:
  LatentOracle(EigenBasis basis, std::function<double(const Eigen::VectorXd&)> f,
               std::optional<std::uint64_t> budget = std::nullopt)
      : LedgeredOracle(budget), basis_(std::move(basis)), f_(std::move(f)) {}

 protected:
  double score(const ImageTensor& image, const TargetId&) const override { return f_(project(basis_, image)); }

 private:
  EigenBasis basis_;
  std::function<double(const Eigen::VectorXd&)> f_;
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("eigenprobe_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
