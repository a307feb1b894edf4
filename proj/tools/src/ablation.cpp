#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "eigenprobe/cli/commands.hpp"
#include "eigenprobe/errors.hpp"

namespace eigenprobe::cli {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<std::size_t> as_count(double v, std::size_t min) {
  if (!std::isfinite(v) || v != std::floor(v) || v < static_cast<double>(min)) return std::nullopt;
  return static_cast<std::size_t>(v);
}

}  // namespace

AblationAxis AblationAxis::parse(const std::string& text) {
  static const std::set<std::string> known{"k", "sigma", "lr", "restarts", "restart-iters", "main-iters"};
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw InvalidArgument("axis must look like name=v1,v2,...; got '" + text + "'");
  }
  AblationAxis axis;
  axis.name = text.substr(0, eq);
  if (!known.count(axis.name)) {
    throw InvalidArgument("unknown ablation axis '" + axis.name +
                          "' (k, sigma, lr, restarts, restart-iters, main-iters)");
  }
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw InvalidArgument("axis " + axis.name + ": bad value '" + item + "'");
    }
    axis.values.push_back(v);
  }
  if (axis.values.empty()) throw InvalidArgument("axis " + axis.name + " has no values");
  return axis;
}

std::vector<AblationRow> run_ablation(const AblationWorld& world, const AblationSpec& spec, std::ostream& log) {
  if (spec.axes.empty()) throw InvalidArgument("ablate needs at least one sweep axis");
  if (world.targets.empty()) throw InvalidArgument("ablate needs at least one target");
  if (spec.seeds == 0) throw InvalidArgument("seeds must be >= 1");
  if (!world.target_embedder || !world.transfer_embedder) throw InvalidArgument("ablate needs both embedders");
  if (world.training.size() < 2) throw InvalidArgument("ablate needs at least 2 training images");

  const std::size_t d = world.training.front().size();
  const std::size_t max_rank = std::min(d, world.training.size() - 1);
  if (spec.base_rank == 0 || spec.base_rank > max_rank) {
    throw InvalidArgument("base rank " + std::to_string(spec.base_rank) + " outside [1, " +
                          std::to_string(max_rank) + "]");
  }
  std::size_t fit_rank = spec.base_rank;
  for (const auto& axis : spec.axes) {
    if (axis.name != "k") continue;
    for (double v : axis.values) {
      if (auto n = as_count(v, 1); n && *n <= max_rank) fit_rank = std::max(fit_rank, *n);
    }
  }
  // Leading components do not depend on how many are kept, so one fit at the
  // largest rank serves every k on the axis.
  const EigenBasis full = fit_pca(world.training, fit_rank);

  std::map<std::string, Eigen::VectorXd> target_embed, transfer_embed;
  for (const auto& [id, image] : world.targets) {
    target_embed[id] = world.target_embedder->embed(image);
    transfer_embed[id] = world.transfer_embedder->embed(image);
  }

  std::vector<AblationRow> rows;
  for (const auto& axis : spec.axes) {
    for (double value : axis.values) {
      OptimizerConfig config = spec.base;
      std::size_t rank = spec.base_rank;
      std::string skip;
      if (axis.name == "k") {
        const auto n = as_count(value, 1);
        if (!n || *n > max_rank) {
          skip = "rank must be an integer in [1, " + std::to_string(max_rank) + "]";
        } else {
          rank = *n;
        }
      } else if (axis.name == "sigma" || axis.name == "lr") {
        if (!(value > 0.0) || !std::isfinite(value)) {
          skip = axis.name + " must be > 0";
        } else if (axis.name == "sigma") {
          config.sigma = value;
        } else {
          config.learning_rate = value;
        }
      } else {
        const auto n = as_count(value, axis.name == "restarts" ? 1 : 0);
        if (!n) {
          skip = axis.name + " must be a " + (axis.name == "restarts" ? "positive" : "non-negative") + " integer";
        } else if (axis.name == "restarts") {
          config.n_restarts = *n;
        } else if (axis.name == "restart-iters") {
          config.restart_iters = *n;
        } else {
          config.main_iters = *n;
        }
      }
      if (!skip.empty()) {
        log << "skipping " << axis.name << "=" << shortest(value) << ": " << skip << "\n";
        continue;
      }

      const EigenBasis basis = truncate(full, rank);
      for (std::size_t s = 0; s < spec.seeds; ++s) {
        const auto& [id, image] = world.targets[s % world.targets.size()];
        config.seed = spec.base.seed + s;
        const TargetId target(id);
        auto oracle = apply_wrappers(make_cosine_oracle(world.target_embedder, {{target, image}}, std::nullopt),
                                     spec.quantize_bits, spec.noise_std, config.seed);
        const Reconstruction rec = reconstruct(basis, *oracle, target, config);

        AblationRow row;
        row.axis = axis.name;
        row.value = value;
        row.seed = config.seed;
        row.target = id;
        row.target_similarity = cosine(world.target_embedder->embed(rec.image), target_embed.at(id));
        row.transfer_similarity = cosine(world.transfer_embedder->embed(rec.image), transfer_embed.at(id));
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "axis,value,seed,target,target_similarity,transfer_similarity\n";
  for (const auto& r : rows) {
    out << r.axis << ',' << shortest(r.value) << ',' << r.seed << ',' << r.target << ','
        << shortest(r.target_similarity) << ',' << shortest(r.transfer_similarity) << '\n';
  }
}

}  // namespace eigenprobe::cli
