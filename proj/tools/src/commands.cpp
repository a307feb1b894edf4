#include "eigenprobe/cli/commands.hpp"

#include <algorithm>
#include <charconv>
#include <condition_variable>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

#include "CLI11.hpp"
#include "eigenprobe/errors.hpp"
#include "eigenprobe/image.hpp"
#include "eigenprobe/netbox.hpp"
#include "eigenprobe/synthetic.hpp"
#include "eigenprobe/verify.hpp"

namespace eigenprobe::cli {

namespace fs = std::filesystem;

namespace {

std::mutex g_shutdown_mu;
std::condition_variable g_shutdown_cv;
bool g_shutdown = false;

}  // namespace

void request_shutdown() {
  {
    std::lock_guard lock(g_shutdown_mu);
    g_shutdown = true;
  }
  g_shutdown_cv.notify_all();
}

int exit_code_for(const std::exception& e) {
  if (const auto* ri = dynamic_cast<const RunInterrupted*>(&e)) {
    switch (ri->cause()) {
      case RunInterrupted::Cause::kBudget: return kExitBudget;
      case RunInterrupted::Cause::kConnection: return kExitConnection;
      case RunInterrupted::Cause::kOther: return kExitError;
    }
  }
  if (dynamic_cast<const BudgetExhausted*>(&e)) return kExitBudget;
  if (dynamic_cast<const ConnectionError*>(&e) || dynamic_cast<const ProtocolError*>(&e)) return kExitConnection;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kExitFormat;
  if (dynamic_cast<const InvalidArgument*>(&e)) return kExitUsage;
  return kExitError;
}

OracleSpec OracleSpec::parse(const std::string& text) {
  OracleSpec spec;
  if (text.starts_with("builtin:")) {
    const std::string rest = text.substr(8);
    const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), spec.seed);
    if (rest.empty() || res.ec != std::errc() || res.ptr != rest.data() + rest.size()) {
      throw InvalidArgument("builtin oracle seed must be an unsigned integer: '" + text + "'");
    }
    spec.kind = Kind::kBuiltin;
    return spec;
  }
  if (text.starts_with("remote:") && text.size() > 7) {
    spec.kind = Kind::kRemote;
    spec.address = text.substr(7);
    return spec;
  }
  throw InvalidArgument("expected builtin:<seed> or remote:<host:port>, got '" + text + "'");
}

std::vector<std::pair<std::string, ImageTensor>> load_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<std::string, ImageTensor>> images;
  images.reserve(files.size());
  for (const auto& f : files) images.emplace_back(f.stem().string(), read_png(f));
  return images;
}

ImageTensor conform(const ImageTensor& image, const ImageShape& shape) {
  ImageTensor out = image.channels() == shape.channels ? image : convert_channels(image, shape.channels);
  if (out.width() != shape.width || out.height() != shape.height) {
    out = resize_bilinear(out, shape.width, shape.height);
  }
  return out;
}

std::unique_ptr<SimilarityOracle> apply_wrappers(std::unique_ptr<SimilarityOracle> oracle,
                                                 std::optional<unsigned> quantize_bits, double noise_std,
                                                 std::uint64_t noise_seed) {
  if (noise_std < 0.0) throw InvalidArgument("noise std must be >= 0");
  if (noise_std > 0.0) oracle = wrap_noise(std::move(oracle), noise_std, noise_seed);
  if (quantize_bits) oracle = wrap_quantize(std::move(oracle), *quantize_bits);
  return oracle;
}

namespace {

ImageShape shape_of(const ImageTensor& image) { return {image.width(), image.height(), image.channels()}; }

void echo_config(const CLI::App& cmd, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "config.toml");
  f << "# effective configuration; rerun with: eigenprobe --config config.toml " << cmd.get_name() << "\n[" << cmd.get_name() << "]\n";
  std::istringstream lines(cmd.config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    if (!line.ends_with("=\"\"")) f << line << "\n";  // unset optional flags
  }
  if (!f) throw FormatError("cannot write " + (out_dir / "config.toml").string());
}

struct OptimizerFlags {
  OptimizerConfig config;
  double lr = 0.0;
  CLI::Option* lr_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--sigma", config.sigma, "probe scale")->capture_default_str();
    lr_opt = app->add_option("--lr", lr, "step size (default 1/k)");
    app->add_option("--restarts", config.n_restarts, "multi-start count")->capture_default_str();
    app->add_option("--restart-iters", config.restart_iters, "iterations per restart")->capture_default_str();
    app->add_option("--main-iters", config.main_iters, "iterations after the best restart")->capture_default_str();
    app->add_option("--trace-every", config.trace_every, "log every n-th iteration")->capture_default_str();
    app->add_option("--init-std", config.init_stddev, "random restart starts (0 = mean face)")->capture_default_str();
    app->add_flag("--clamp-probes", config.clamp_probes, "clamp probe pixels to [0, 1]");
  }

  OptimizerConfig resolve(std::uint64_t seed) const {
    OptimizerConfig c = config;
    c.seed = seed;
    if (*lr_opt) c.learning_rate = lr;
    c.validate();
    return c;
  }
};

struct EmbedderFlags {
  std::size_t embed_dim;
  bool flip_concat = true;

  explicit EmbedderFlags(std::size_t dim) : embed_dim(dim) {}

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "embed-dim", embed_dim, "embedding width")->capture_default_str();
    app->add_flag("--" + prefix + "flip-concat,!--" + prefix + "no-flip-concat", flip_concat,
                  "concatenate the embedding of the mirrored image")
        ->default_str(flip_concat ? "true" : "false");
  }

  std::shared_ptr<const SyntheticEmbedder> make(std::uint64_t seed, const ImageShape& shape) const {
    return std::make_shared<SyntheticEmbedder>(seed, embed_dim, shape.width, shape.height, shape.channels,
                                               flip_concat);
  }
};

struct DegradeFlags {
  unsigned bits = 0;
  double noise_std = 0.0;
  CLI::Option* bits_opt = nullptr;

  void add(CLI::App* app) {
    bits_opt = app->add_option("--quantize-bits", bits, "round scores to 2/2^bits steps");
    app->add_option("--noise-std", noise_std, "add N(0, std^2) to each score")->capture_default_str();
  }
  std::optional<unsigned> quantize() const { return *bits_opt ? std::optional<unsigned>(bits) : std::nullopt; }
};

std::optional<std::uint64_t> optional_budget(const CLI::Option* opt, std::uint64_t value) {
  return *opt ? std::optional<std::uint64_t>(value) : std::nullopt;
}

std::map<TargetId, ImageTensor> load_enrollment(const fs::path& dir, const std::optional<ImageShape>& shape) {
  auto images = load_image_dir(dir);
  if (images.empty()) throw InvalidArgument("no PNG images in enrollment directory " + dir.string());
  const ImageShape s = shape ? *shape : shape_of(images.front().second);
  std::map<TargetId, ImageTensor> enrollment;
  for (auto& [id, image] : images) enrollment.emplace(TargetId(id), conform(image, s));
  return enrollment;
}

// ---- pca-fit -------------------------------------------------------------

struct PcaFitCmd {
  fs::path images, basis, out_dir;
  std::size_t rank = 0;
  std::uint32_t width = 0, height = 0, channels = 0;
  std::uint64_t seed = 0;
  CLI::App* app = nullptr;

  void add(CLI::App& parent) {
    app = parent.add_subcommand("pca-fit", "fit an eigenface basis to a directory of PNG images");
    app->add_option("--images", images, "directory of training PNGs")->required();
    app->add_option("--rank", rank, "number of components k")->required();
    app->add_option("--basis", basis, "output basis file")->required();
    app->add_option("--width", width, "fit resolution (default: first image)");
    app->add_option("--height", height, "fit resolution (default: first image)");
    app->add_option("--channels", channels, "1 or 3 (default: first image)");
    app->add_option("--out-dir", out_dir, "echo the effective config here");
    app->add_option("--seed", seed, "accepted for uniformity; the fit is deterministic");
  }

  int run(std::ostream& out) const {
    auto loaded = load_image_dir(images);
    if (loaded.empty()) throw InvalidArgument("no PNG images in " + images.string());
    const ImageTensor& first = loaded.front().second;
    const ImageShape shape{width ? width : first.width(), height ? height : first.height(),
                           channels ? channels : first.channels()};
    std::vector<ImageTensor> training;
    training.reserve(loaded.size());
    for (auto& [id, image] : loaded) training.push_back(conform(image, shape));
    const EigenBasis b = fit_pca(training, rank);
    if (basis.has_parent_path()) fs::create_directories(basis.parent_path());
    save_basis(b, basis);
    if (!out_dir.empty()) echo_config(*app, out_dir);
    out << "images=" << training.size() << " d=" << b.dim() << " k=" << b.rank()
        << " retained_variance=" << retained_variance(b, training) << "\n";
    return kExitOk;
  }
};

// ---- reconstruct ---------------------------------------------------------

struct ReconstructCmd {
  fs::path basis, out_dir, enroll_dir;
  std::string oracle = "builtin:0", target, transfer;
  std::uint64_t seed = 0, budget = 0;
  CLI::Option* budget_opt = nullptr;
  bool monitor = false;
  OptimizerFlags opt;
  EmbedderFlags embed{128};
  std::size_t transfer_dim = 128;
  DegradeFlags degrade;
  CLI::App* app = nullptr;

  void add(CLI::App& parent) {
    app = parent.add_subcommand("reconstruct", "recover a face from similarity scores alone");
    app->add_option("--basis", basis, "basis file from pca-fit")->required();
    app->add_option("--out-dir", out_dir, "output directory")->required();
    app->add_option("--seed", seed, "seed for restarts, main phase and score noise")->capture_default_str();
    app->add_option("--oracle", oracle, "builtin:<seed> or remote:<host:port>")->capture_default_str();
    app->add_option("--target", target, "target id (default: the only enrolled id)");
    app->add_option("--enroll-dir", enroll_dir, "builtin oracle: enrolled PNGs, id = file stem");
    budget_opt = app->add_option("--budget", budget, "query budget");
    embed.add(app);
    degrade.add(app);
    opt.add(app);
    app->add_flag("--monitor", monitor, "builtin oracle: log the exact target similarity per row");
    app->add_option("--transfer", transfer, "builtin oracle: also log similarity under builtin:<seed>");
    app->add_option("--transfer-dim", transfer_dim, "embedding width of the transfer embedder")
        ->capture_default_str();
  }

  int run(std::ostream& out, std::ostream& err) const {
    const EigenBasis b = load_basis(basis);
    const OptimizerConfig config = opt.resolve(seed);
    const OracleSpec spec = OracleSpec::parse(oracle);
    const auto budget_value = optional_budget(budget_opt, budget);

    std::unique_ptr<SimilarityOracle> base;
    std::vector<TraceMonitor> monitors;
    std::optional<TargetId> id;
    if (!target.empty()) id.emplace(target);

    if (spec.kind == OracleSpec::Kind::kBuiltin) {
      if (enroll_dir.empty()) throw InvalidArgument("a builtin oracle needs --enroll-dir");
      const auto enrollment = load_enrollment(enroll_dir, b.shape);
      if (!id) {
        if (enrollment.size() != 1) throw InvalidArgument("several identities enrolled; pick one with --target");
        id = enrollment.begin()->first;
      }
      const auto it = enrollment.find(*id);
      if (it == enrollment.end()) throw InvalidArgument("target '" + id->str() + "' is not enrolled");
      const auto embedder = embed.make(spec.seed, b.shape);
      base = make_cosine_oracle(embedder, enrollment, budget_value);
      if (monitor) {
        auto ref = std::make_shared<Eigen::VectorXd>(embedder->embed(it->second));
        monitors.push_back({"target_similarity", [embedder, ref](const ImageTensor& img) {
                              return cosine(embedder->embed(img), *ref);
                            }});
      }
      if (!transfer.empty()) {
        const OracleSpec t = OracleSpec::parse(transfer);
        if (t.kind != OracleSpec::Kind::kBuiltin) throw InvalidArgument("--transfer must be builtin:<seed>");
        auto other = std::make_shared<SyntheticEmbedder>(t.seed, transfer_dim, b.shape.width, b.shape.height,
                                                         b.shape.channels, embed.flip_concat);
        auto ref = std::make_shared<Eigen::VectorXd>(other->embed(it->second));
        monitors.push_back({"transfer_similarity", [other, ref](const ImageTensor& img) {
                              return cosine(other->embed(img), *ref);
                            }});
      }
    } else {
      if (!id) throw InvalidArgument("a remote oracle needs --target");
      if (monitor || !transfer.empty()) throw InvalidArgument("--monitor and --transfer need a builtin oracle");
      RemoteOptions ro;
      ro.budget = budget_value;
      base = std::make_unique<RemoteOracle>(spec.address, *id, ro);
    }
    auto oracle_ptr = apply_wrappers(std::move(base), degrade.quantize(), degrade.noise_std, seed);

    fs::create_directories(out_dir);
    echo_config(*app, out_dir);
    const auto write_outputs = [&](const LatentCoords& coords, const RunTrace& trace) {
      write_png(synthesize(b, coords), out_dir / "reconstruction.png");
      save_coords(coords, out_dir / "coords.f32");
      write_trace_csv(trace, out_dir / "trace.csv");
    };
    try {
      const Reconstruction rec = reconstruct(b, *oracle_ptr, *id, config, monitors);
      write_outputs(rec.coords, rec.trace);
      out << "target=" << id->str() << " queries=" << rec.trace.queries_used
          << " selected_restart=" << rec.trace.selected_restart.value_or(0)
          << " final_score=" << (rec.trace.rows.empty() ? 0.0 : rec.trace.rows.back().score) << "\n";
    } catch (const RunInterrupted& e) {
      write_outputs(e.best_coords(), e.partial_trace());
      err << "run interrupted after " << e.partial_trace().queries_used << " queries: " << e.what()
          << "\npartial outputs written to " << out_dir.string() << "\n";
      return exit_code_for(e);
    }
    return kExitOk;
  }
};

// ---- evaluate ------------------------------------------------------------

struct EvaluateCmd {
  fs::path pairs, reconstructions, out_dir;
  std::string embedder = "builtin:0";
  EmbedderFlags embed{128};
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  CLI::App* app = nullptr;

  void add(CLI::App& parent) {
    app = parent.add_subcommand("evaluate", "k-fold verification accuracy, optionally with reconstructions");
    app->add_option("--pairs", pairs, "pair list CSV: id_a,path_a,id_b,path_b,label")->required();
    app->add_option("--reconstructions", reconstructions, "directory with <id_a>.png for positive pairs");
    app->add_option("--embedder", embedder, "builtin:<seed>")->capture_default_str();
    embed.add(app);
    app->add_option("--folds", folds, "number of folds")->capture_default_str();
    app->add_option("--out-dir", out_dir, "output directory")->required();
    app->add_option("--seed", seed, "accepted for uniformity; evaluation is deterministic");
  }

  int run(std::ostream& out) const {
    const OracleSpec spec = OracleSpec::parse(embedder);
    if (spec.kind != OracleSpec::Kind::kBuiltin) throw InvalidArgument("--embedder must be builtin:<seed>");
    const auto entries = read_pair_list(pairs);
    if (entries.empty()) throw InvalidArgument(pairs.string() + " has no pairs");

    std::map<fs::path, ImageTensor> cache;
    std::optional<ImageShape> shape;
    const auto load = [&](const fs::path& p, std::size_t line) -> const ImageTensor& {
      auto it = cache.find(p);
      if (it != cache.end()) return it->second;
      ImageTensor img;
      try {
        img = read_png(p);
      } catch (const FormatError& e) {
        throw FormatError(pairs.string() + ":" + std::to_string(line) + ": " + e.what());
      }
      if (!shape) shape = shape_of(img);
      return cache.emplace(p, conform(img, *shape)).first->second;
    };

    std::vector<EvaluationPair> eval;
    eval.reserve(entries.size());
    for (const auto& e : entries) {
      EvaluationPair p;
      p.first = load(e.path_a, e.line);
      p.second = load(e.path_b, e.line);
      p.label = e.label;
      if (e.label == 1 && !reconstructions.empty()) {
        p.reconstruction = load(reconstructions / (e.id_a + ".png"), e.line);
      }
      eval.push_back(std::move(p));
    }
    const auto emb = embed.make(spec.seed, *shape);
    const FoldReport report = evaluate_replacement(eval, *emb, folds);
    fs::create_directories(out_dir);
    write_fold_report(report, out_dir / "report.csv");
    echo_config(*app, out_dir);
    out << "pairs=" << eval.size() << " folds=" << report.folds() << " mean_accuracy=" << report.mean_accuracy
        << "\n";
    return kExitOk;
  }
};

// ---- ablate --------------------------------------------------------------

struct AblateCmd {
  std::vector<std::string> axes;
  fs::path images, enroll_dir, out_dir;
  std::uint64_t seed = 0;
  std::size_t seeds = 20, rank = 64, corpus_size = 400;
  SyntheticFaceModel::Params model;
  std::string oracle = "builtin:11", transfer = "builtin:22";
  EmbedderFlags embed{32};
  EmbedderFlags transfer_embed{128};
  OptimizerFlags opt;
  DegradeFlags degrade;
  CLI::App* app = nullptr;

  void add(CLI::App& parent) {
    app = parent.add_subcommand("ablate", "sweep k, sigma, restarts or iteration counts");
    app->add_option("--axis", axes, "name=v1,v2,... (k, sigma, lr, restarts, restart-iters, main-iters)")
        ->required();
    app->add_option("--seeds", seeds, "rows per grid point")->capture_default_str();
    app->add_option("--rank", rank, "k when not swept")->capture_default_str();
    app->add_option("--seed", seed, "world seed and first optimizer seed")->capture_default_str();
    app->add_option("--images", images, "training PNGs (default: synthetic corpus)");
    app->add_option("--enroll-dir", enroll_dir, "target PNGs (default: synthetic targets)");
    app->add_option("--corpus-size", corpus_size, "synthetic corpus size")->capture_default_str();
    app->add_option("--width", model.width, "synthetic width")->capture_default_str();
    app->add_option("--height", model.height, "synthetic height")->capture_default_str();
    app->add_option("--channels", model.channels, "synthetic channels")->capture_default_str();
    app->add_option("--latent-dim", model.latent_dim, "synthetic latent size")->capture_default_str();
    app->add_option("--amplitude", model.amplitude, "synthetic variation scale")->capture_default_str();
    app->add_option("--pixel-noise", model.pixel_noise, "synthetic pixel noise")->capture_default_str();
    app->add_option("--oracle", oracle, "target embedder builtin:<seed>")->capture_default_str();
    embed.add(app);
    app->add_option("--transfer", transfer, "transfer embedder builtin:<seed>")->capture_default_str();
    transfer_embed.add(app, "transfer-");
    degrade.add(app);
    opt.add(app);
    app->add_option("--out-dir", out_dir, "output directory")->required();
  }

  int run(std::ostream& out, std::ostream& err) const {
    AblationSpec spec;
    for (const auto& a : axes) spec.axes.push_back(AblationAxis::parse(a));
    spec.base = opt.resolve(seed);
    spec.base_rank = rank;
    spec.seeds = seeds;
    spec.quantize_bits = degrade.quantize();
    spec.noise_std = degrade.noise_std;

    const OracleSpec t = OracleSpec::parse(oracle), tr = OracleSpec::parse(transfer);
    if (t.kind != OracleSpec::Kind::kBuiltin || tr.kind != OracleSpec::Kind::kBuiltin) {
      throw InvalidArgument("ablate needs builtin embedders");
    }
    AblationWorld world;
    ImageShape shape;
    if (!images.empty()) {
      auto loaded = load_image_dir(images);
      if (loaded.empty()) throw InvalidArgument("no PNG images in " + images.string());
      shape = shape_of(loaded.front().second);
      for (auto& [id, img] : loaded) world.training.push_back(conform(img, shape));
    } else {
      SyntheticFaceModel::Params p = model;
      p.seed = seed;
      const SyntheticFaceModel gen(p);
      world.training = gen.corpus(corpus_size);
      shape = {p.width, p.height, p.channels};
      if (enroll_dir.empty()) {
        for (std::size_t s = 0; s < seeds; ++s) world.targets.emplace_back("synth" + std::to_string(s), gen.target(s));
      }
    }
    if (!enroll_dir.empty()) {
      for (auto& [id, img] : load_enrollment(enroll_dir, shape)) world.targets.emplace_back(id.str(), img);
    } else if (world.targets.empty()) {
      throw InvalidArgument("--images needs --enroll-dir");
    }
    world.target_embedder = embed.make(t.seed, shape);
    world.transfer_embedder = transfer_embed.make(tr.seed, shape);

    const auto rows = run_ablation(world, spec, err);
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "ablation.csv");
    write_ablation_csv(rows, f);
    if (!f) throw FormatError("cannot write " + (out_dir / "ablation.csv").string());
    echo_config(*app, out_dir);

    // Per-point means, for a quick look.
    std::vector<std::pair<std::string, double>> order;
    std::map<std::pair<std::string, double>, std::pair<double, double>> sums;
    std::map<std::pair<std::string, double>, std::size_t> counts;
    for (const auto& r : rows) {
      const auto key = std::make_pair(r.axis, r.value);
      if (!counts.count(key)) order.push_back(key);
      sums[key].first += r.target_similarity;
      sums[key].second += r.transfer_similarity;
      ++counts[key];
    }
    for (const auto& key : order) {
      const double n = static_cast<double>(counts[key]);
      out << key.first << "=" << key.second << " target=" << sums[key].first / n
          << " transfer=" << sums[key].second / n << "\n";
    }
    return kExitOk;
  }
};

// ---- serve ---------------------------------------------------------------

struct ServeCmd {
  fs::path enroll_dir, basis, port_file;
  std::string oracle = "builtin:0", host = "127.0.0.1";
  int port = 8080;
  std::uint64_t seed = 0, budget = 0;
  CLI::Option* budget_opt = nullptr;
  EmbedderFlags embed{128};
  DegradeFlags degrade;
  CLI::App* app = nullptr;

  void add(CLI::App& parent) {
    app = parent.add_subcommand("serve", "expose a builtin oracle over HTTP");
    app->add_option("--enroll-dir", enroll_dir, "enrolled PNGs, id = file stem")->required();
    app->add_option("--oracle", oracle, "builtin:<seed>")->capture_default_str();
    app->add_option("--basis", basis, "conform enrollment to this basis' shape");
    embed.add(app);
    budget_opt = app->add_option("--budget", budget, "per-target query budget");
    degrade.add(app);
    app->add_option("--seed", seed, "score-noise seed")->capture_default_str();
    app->add_option("--host", host, "bind address")->capture_default_str();
    app->add_option("--port", port, "bind port (0 picks one)")->capture_default_str();
    app->add_option("--port-file", port_file, "write the bound port here once listening");
  }

  int run(std::ostream& out) const {
    const OracleSpec spec = OracleSpec::parse(oracle);
    if (spec.kind != OracleSpec::Kind::kBuiltin) throw InvalidArgument("serve needs a builtin:<seed> oracle");
    std::optional<ImageShape> shape;
    if (!basis.empty()) shape = load_basis(basis).shape;
    const auto enrollment = load_enrollment(enroll_dir, shape);
    const ImageShape s = shape_of(enrollment.begin()->second);
    std::shared_ptr<SimilarityOracle> inner = apply_wrappers(
        make_cosine_oracle(embed.make(spec.seed, s), enrollment, std::nullopt), degrade.quantize(),
        degrade.noise_std, seed);

    ServerOptions options;
    options.host = host;
    options.port = port;
    options.per_target_budget = optional_budget(budget_opt, budget);
    SimilarityServer server(inner, options);
    {
      std::lock_guard lock(g_shutdown_mu);
      g_shutdown = false;
    }
    server.start();
    out << "serving " << enrollment.size() << " target(s) on " << server.address() << "\n";
    for (const auto& [id, img] : enrollment) out << "  " << id.str() << "\n";
    out.flush();
    if (!port_file.empty()) {
      const fs::path tmp = port_file.string() + ".tmp";
      {
        std::ofstream f(tmp);
        f << server.port() << "\n";
      }
      fs::rename(tmp, port_file);
    }
    std::unique_lock lock(g_shutdown_mu);
    g_shutdown_cv.wait(lock, [] { return g_shutdown; });
    lock.unlock();
    server.stop();
    return kExitOk;
  }
};

// ---- make-corpus ---------------------------------------------------------

struct MakeCorpusCmd {
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::size_t count = 256, identities = 8;
  double jitter = 0.3;
  SyntheticFaceModel::Params model{32, 32, 3, 96, 0.4, 0.01, 0};
  CLI::App* app = nullptr;

  void add(CLI::App& parent) {
    app = parent.add_subcommand("make-corpus", "write a synthetic training set, targets and a pair list");
    app->add_option("--out-dir", out_dir, "output directory")->required();
    app->add_option("--seed", seed, "generator seed")->capture_default_str();
    app->add_option("--count", count, "training images")->capture_default_str();
    app->add_option("--identities", identities, "held-out identities (>= 2)")->capture_default_str();
    app->add_option("--jitter", jitter, "latent difference between two photos of one identity")
        ->capture_default_str();
    app->add_option("--width", model.width, "image width")->capture_default_str();
    app->add_option("--height", model.height, "image height")->capture_default_str();
    app->add_option("--channels", model.channels, "1 or 3")->capture_default_str();
    app->add_option("--latent-dim", model.latent_dim, "latent size")->capture_default_str();
    app->add_option("--amplitude", model.amplitude, "variation scale")->capture_default_str();
    app->add_option("--pixel-noise", model.pixel_noise, "pixel noise")->capture_default_str();
  }

  static std::string numbered(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
    return buf;
  }

  int run(std::ostream& out) const {
    if (identities < 2) throw InvalidArgument("--identities must be >= 2");
    SyntheticFaceModel::Params p = model;
    p.seed = seed;
    const SyntheticFaceModel gen(p);
    for (const char* sub : {"corpus", "targets", "views"}) fs::create_directories(out_dir / sub);
    for (std::size_t i = 0; i < count; ++i) {
      write_png(gen.sample(streams::kCorpus, i), out_dir / "corpus" / (numbered("c", i) + ".png"));
    }
    std::ofstream pairs(out_dir / "pairs.csv");
    pairs << "id_a,path_a,id_b,path_b,label\n";
    for (std::size_t i = 0; i < identities; ++i) {
      const std::string id = numbered("id", i);
      write_png(gen.view(i, 0, jitter), out_dir / "targets" / (id + ".png"));
      write_png(gen.view(i, 1, jitter), out_dir / "views" / (id + ".png"));
    }
    for (std::size_t i = 0; i < identities; ++i) {
      const std::string a = numbered("id", i), b = numbered("id", (i + 1) % identities);
      pairs << a << ",targets/" << a << ".png," << a << ",views/" << a << ".png,1\n";
      pairs << a << ",targets/" << a << ".png," << b << ",views/" << b << ".png,0\n";
    }
    if (!pairs) throw FormatError("cannot write " + (out_dir / "pairs.csv").string());
    echo_config(*app, out_dir);
    out << "corpus=" << count << " identities=" << identities << " pairs=" << 2 * identities << "\n";
    return kExitOk;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"eigenprobe: black-box face reconstruction from similarity scores"};
  app.name("eigenprobe");
  app.require_subcommand(1);
  app.set_version_flag("--version", "eigenprobe 0.1.0");
  app.set_config("--config", "", "TOML file with a [<subcommand>] section; flags override it");
  app.fallthrough();
  app.footer("exit codes: 0 ok, 1 error, 2 usage, 3 budget exhausted, 4 connection, 5 bad input file");

  PcaFitCmd pca_fit;
  ReconstructCmd reconstruct_cmd;
  EvaluateCmd evaluate;
  AblateCmd ablate;
  ServeCmd serve;
  MakeCorpusCmd make_corpus;
  pca_fit.add(app);
  reconstruct_cmd.add(app);
  evaluate.add(app);
  ablate.add(app);
  serve.add(app);
  make_corpus.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pca_fit.app) return pca_fit.run(out);
    if (*reconstruct_cmd.app) return reconstruct_cmd.run(out, err);
    if (*evaluate.app) return evaluate.run(out);
    if (*ablate.app) return ablate.run(out, err);
    if (*serve.app) return serve.run(out);
    if (*make_corpus.app) return make_corpus.run(out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitUsage;
}

}  // namespace eigenprobe::cli
