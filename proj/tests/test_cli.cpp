#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "eigenprobe/cli/commands.hpp"
#include "eigenprobe/errors.hpp"
#include "eigenprobe/image.hpp"
#include "eigenprobe/netbox.hpp"
#include "support.hpp"

using namespace eigenprobe;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "eigenprobe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Shared fixture: a small synthetic corpus and a rank-16 basis.
const fs::path& world() {
  static const fs::path dir = [] {
    const fs::path d = testing::scratch_dir("cli_world");
    const auto a = run_cli({"make-corpus", "--out-dir", d.string(), "--count", "40", "--identities", "3", "--width", "12",
                        "--height", "10", "--seed", "5"});
    REQUIRE(a.code == 0);
    const auto b = run_cli({"pca-fit", "--images", (d / "corpus").string(), "--rank", "16", "--basis",
                        (d / "basis.bin").string()});
    REQUIRE(b.code == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> recon_args(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{"reconstruct", "--basis", (world() / "basis.bin").string(), "--enroll-dir",
                             (world() / "targets").string(), "--target", "id0001", "--out-dir", out.string(),
                             "--restarts", "2", "--restart-iters", "5", "--main-iters", "20", "--seed", "3"};
  // Flags given in `extra` replace the defaults above.
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const bool has_value = i + 1 < extra.size() && extra[i + 1].rfind("--", 0) != 0;
    const auto it = std::find(a.begin(), a.end(), extra[i]);
    if (has_value && it != a.end()) {
      *(it + 1) = extra[++i];
    } else {
      a.push_back(extra[i]);
      if (has_value) a.push_back(extra[++i]);
    }
  }
  return a;
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run_cli({"reconstruct", "--bogus"}).code == cli::kExitUsage);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
  CHECK(run_cli({"--version"}).code == cli::kExitOk);
}

TEST_CASE("oracle argument parsing") {
  CHECK(cli::OracleSpec::parse("builtin:42").seed == 42);
  CHECK(cli::OracleSpec::parse("remote:10.0.0.1:99").address == "10.0.0.1:99");
  CHECK_THROWS_AS(cli::OracleSpec::parse("builtin:x"), InvalidArgument);
  CHECK_THROWS_AS(cli::OracleSpec::parse("builtin:"), InvalidArgument);
  CHECK_THROWS_AS(cli::OracleSpec::parse("magic:1"), InvalidArgument);
  CHECK_THROWS_AS(cli::OracleSpec::parse("remote:"), InvalidArgument);
}

TEST_CASE("pca-fit") {
  const fs::path d = testing::scratch_dir("cli_pca");
  fs::create_directories(d / "three");
  for (int i = 0; i < 3; ++i) {
    fs::copy_file(world() / "corpus" / ("c000" + std::to_string(i) + ".png"), d / "three" / (std::to_string(i) + ".png"));
  }
  const auto ok = run_cli({"pca-fit", "--images", (d / "three").string(), "--rank", "2", "--basis", (d / "b.bin").string()});
  REQUIRE(ok.code == 0);
  CHECK(ok.out.find("k=2") != std::string::npos);
  CHECK(load_basis(d / "b.bin").rank() == 2);
  CHECK(run_cli({"pca-fit", "--images", (d / "three").string(), "--rank", "3", "--basis", (d / "c.bin").string()}).code ==
        cli::kExitUsage);
  REQUIRE(run_cli({"pca-fit", "--images", (d / "three").string(), "--rank", "2", "--basis", (d / "b2.bin").string()})
              .code == 0);
  CHECK(slurp(d / "b.bin") == slurp(d / "b2.bin"));
  CHECK(run_cli({"pca-fit", "--images", (d / "nope").string(), "--rank", "2", "--basis", (d / "x.bin").string()}).code ==
        cli::kExitFormat);
}

TEST_CASE("reconstruct writes the three artifacts with exact accounting") {
  const fs::path d = testing::scratch_dir("cli_rec");
  const auto r = run_cli(recon_args(d / "a", {"--monitor"}));
  REQUIRE(r.code == 0);
  for (const char* f : {"reconstruction.png", "coords.f32", "trace.csv", "config.toml"}) CHECK(fs::exists(d / "a" / f));
  const auto trace = lines(slurp(d / "a" / "trace.csv"));
  CHECK(trace.front() == "phase,restart,iteration,queries_used,score,target_similarity");
  CHECK(trace.back().rfind("main,,20,62,", 0) == 0);  // 2 * (2 * 5 + 1) + 2 * 20
  CHECK(load_coords(d / "a" / "coords.f32").size() == 16);

  // Same seed, same bytes.
  REQUIRE(run_cli(recon_args(d / "b", {"--monitor"})).code == 0);
  for (const char* f : {"reconstruction.png", "coords.f32", "trace.csv"}) CHECK(slurp(d / "a" / f) == slurp(d / "b" / f));
  REQUIRE(run_cli(recon_args(d / "c", {"--seed", "4"})).code == 0);
  CHECK(slurp(d / "a" / "coords.f32") != slurp(d / "c" / "coords.f32"));

  // The echoed config reproduces the run.
  REQUIRE(run_cli({"--config", (d / "a" / "config.toml").string(), "reconstruct", "--out-dir", (d / "e").string()}).code ==
          0);
  CHECK(slurp(d / "a" / "trace.csv") == slurp(d / "e" / "trace.csv"));
}

TEST_CASE("degenerate schedule renders the mean face") {
  const fs::path d = testing::scratch_dir("cli_mean");
  REQUIRE(run_cli(recon_args(d, {"--restarts", "1", "--restart-iters", "0", "--main-iters", "0"})).code == 0);
  const EigenBasis b = load_basis(world() / "basis.bin");
  write_png(synthesize(b, Eigen::VectorXd::Zero(16)), d / "mean.png");
  CHECK(slurp(d / "mean.png") == slurp(d / "reconstruction.png"));
  CHECK(lines(slurp(d / "trace.csv")).back().rfind("restart_eval,0,0,1,", 0) == 0);
}

TEST_CASE("reconstruct exit codes") {
  const fs::path d = testing::scratch_dir("cli_codes");
  CHECK(run_cli(recon_args(d / "budget", {"--budget", "61"})).code == cli::kExitBudget);
  CHECK(run_cli(recon_args(d / "lr", {"--lr", "-1"})).code == cli::kExitUsage);
  CHECK(run_cli(recon_args(d / "who", {"--target", "nobody"})).code == cli::kExitUsage);
  std::ofstream(d / "garbage.bin") << "garbage";
  auto args = recon_args(d / "fmt");
  args[2] = (d / "garbage.bin").string();
  CHECK(run_cli(args).code == cli::kExitFormat);

  int dead_port = 0;
  {
    SimilarityServer s(std::shared_ptr<SimilarityOracle>(make_cosine_oracle(
                           std::make_shared<SyntheticEmbedder>(0, 4, 1, 1, 1, false),
                           {{TargetId("x"), ImageTensor(1, 1, 1, {0.5f})}}, std::nullopt)),
                       {});
    s.start();
    dead_port = s.port();
  }
  CHECK(run_cli({"reconstruct", "--basis", (world() / "basis.bin").string(), "--oracle",
             "remote:127.0.0.1:" + std::to_string(dead_port), "--target", "id0001", "--out-dir", (d / "conn").string()})
            .code == cli::kExitConnection);
}

TEST_CASE("evaluate") {
  const fs::path d = testing::scratch_dir("cli_eval");
  const auto base = run_cli({"evaluate", "--pairs", (world() / "pairs.csv").string(), "--out-dir", (d / "g").string(),
                         "--folds", "2"});
  REQUIRE(base.code == 0);
  // Reconstructions identical to the genuine images reproduce the baseline.
  fs::create_directories(d / "recs");
  for (const auto& e : fs::directory_iterator(world() / "targets")) fs::copy_file(e.path(), d / "recs" / e.path().filename());
  REQUIRE(run_cli({"evaluate", "--pairs", (world() / "pairs.csv").string(), "--reconstructions", (d / "recs").string(),
               "--out-dir", (d / "r").string(), "--folds", "2"})
              .code == 0);
  CHECK(slurp(d / "g" / "report.csv") == slurp(d / "r" / "report.csv"));

  // 1000 separable pairs over 10 folds.
  std::ofstream big(d / "big.csv");
  big << "id_a,path_a,id_b,path_b,label\n";
  for (int i = 0; i < 1000; ++i) {
    const int a = i % 3, b = (i + 1) % 3;
    const std::string pa = (world() / "targets" / ("id000" + std::to_string(a) + ".png")).string();
    const std::string pb = (world() / "targets" / ("id000" + std::to_string(b) + ".png")).string();
    if (i % 2) big << "x," << pa << ",x," << pa << ",1\n";
    else big << "x," << pa << ",y," << pb << ",0\n";
  }
  big.close();
  const auto sep = run_cli({"evaluate", "--pairs", (d / "big.csv").string(), "--out-dir", (d / "big").string()});
  REQUIRE(sep.code == 0);
  CHECK(lines(slurp(d / "big" / "report.csv")).back() == "mean,,1");

  std::ofstream bad(d / "bad.csv");
  bad << "id_a,path_a,id_b,path_b,label\n";
  for (int i = 2; i < 17; ++i) bad << "x,targets/id0000.png,y,targets/id0001.png,0\n";
  bad << "x,targets/id0000.png,y\n";
  bad.close();
  const auto r = run_cli({"evaluate", "--pairs", (d / "bad.csv").string(), "--out-dir", (d / "bad").string()});
  CHECK(r.code == cli::kExitFormat);
  CHECK(r.err.find("line 17") != std::string::npos);
}

TEST_CASE("ablate") {
  const fs::path d = testing::scratch_dir("cli_ablate");
  const auto r = run_cli({"ablate", "--axis", "sigma=0.15,0.3,0.6", "--axis", "k=4,500", "--seeds", "2", "--rank", "8",
                      "--corpus-size", "30", "--width", "8", "--height", "8", "--latent-dim", "12", "--restarts", "2",
                      "--restart-iters", "3", "--main-iters", "10", "--out-dir", d.string()});
  REQUIRE(r.code == 0);
  const auto rows = lines(slurp(d / "ablation.csv"));
  CHECK(rows.front() == "axis,value,seed,target,target_similarity,transfer_similarity");
  CHECK(rows.size() == 1 + 3 * 2 + 1 * 2);
  CHECK(rows[1].rfind("sigma,0.15,0,synth0,", 0) == 0);
  CHECK(rows[2].rfind("sigma,0.15,1,synth1,", 0) == 0);
  CHECK(rows.back().rfind("k,4,1,", 0) == 0);
  CHECK(r.err.find("skipping k=500") != std::string::npos);

  CHECK(run_cli({"ablate", "--out-dir", d.string()}).code == cli::kExitUsage);
  CHECK(run_cli({"ablate", "--axis", "gamma=1", "--out-dir", d.string()}).code == cli::kExitUsage);
  cli::AblationWorld w;
  std::ostringstream log;
  CHECK_THROWS_AS(cli::run_ablation(w, {}, log), InvalidArgument);
}

TEST_CASE("serve") {
  const fs::path d = testing::scratch_dir("cli_serve");
  const auto serve_args = [&](const std::string& tag, std::vector<std::string> extra) {
    std::vector<std::string> a{"serve",       "--enroll-dir", (world() / "targets").string(),
                               "--port",      "0",            "--port-file",
                               (d / (tag + ".port")).string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  const auto start = [&](const std::string& tag, std::vector<std::string> extra, Result& res) {
    std::thread t([&res, args = serve_args(tag, std::move(extra))] { res = run_cli(args); });
    const fs::path pf = d / (tag + ".port");
    for (int i = 0; i < 200 && !fs::exists(pf); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(25));
    REQUIRE(fs::exists(pf));
    return std::pair{std::move(t), "127.0.0.1:" + lines(slurp(pf)).front()};
  };
  const ImageTensor probe = read_png(world() / "targets" / "id0002.png");

  Result budget_run{};
  {
    auto [thread, addr] = start("budget", {"--budget", "100"}, budget_run);
    RemoteOracle remote(addr, TargetId("id0002"));  // handshake is the health check
    int scored = 0, refused = 0;
    for (int i = 0; i < 101; ++i) {
      try {
        const double s = remote.query(probe, TargetId("id0002"));
        CHECK(s == 1.0);
        ++scored;
      } catch (const BudgetExhausted&) {
        ++refused;
      }
    }
    CHECK(scored == 100);
    CHECK(refused == 1);
    cli::request_shutdown();
    thread.join();
  }
  CHECK(budget_run.code == 0);
  CHECK(budget_run.out.find("id0000") != std::string::npos);

  Result q_run{};
  {
    auto [thread, addr] = start("quant", {"--quantize-bits", "1"}, q_run);
    RemoteOracle remote(addr, TargetId("id0000"));
    for (int i = 0; i < 3; ++i) {
      const double s = remote.query(read_png(world() / "targets" / ("id000" + std::to_string(i) + ".png")),
                                    TargetId("id0000"));
      CHECK((s == -1.0 || s == 0.0 || s == 1.0));
    }
    cli::request_shutdown();
    thread.join();
  }
  CHECK(q_run.code == 0);

  // Loopback reconstruct equals the builtin run, transcript for transcript.
  Result loop_run{};
  {
    auto [thread, addr] = start("loop", {"--basis", (world() / "basis.bin").string()}, loop_run);
    REQUIRE(run_cli(recon_args(d / "local")).code == 0);
    REQUIRE(run_cli({"reconstruct", "--basis", (world() / "basis.bin").string(), "--oracle", "remote:" + addr, "--target",
                 "id0001", "--out-dir", (d / "remote").string(), "--restarts", "2", "--restart-iters", "5",
                 "--main-iters", "20", "--seed", "3"})
                .code == 0);
    cli::request_shutdown();
    thread.join();
  }
  for (const char* f : {"reconstruction.png", "coords.f32", "trace.csv"}) {
    CHECK(slurp(d / "local" / f) == slurp(d / "remote" / f));
  }

  Result empty_run{};
  fs::create_directories(d / "empty");
  empty_run = run_cli({"serve", "--enroll-dir", (d / "empty").string(), "--port", "0"});
  CHECK(empty_run.code == cli::kExitUsage);
}
