#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eigenprobe/oracle.hpp"

namespace eigenprobe {

/// Wire protocol, version 1.
///
///   POST /v1/similarity
///     {"protocol_version": 1, "target_id": str, "width": n, "height": n,
///      "channels": n, "pixels": base64(f32 little-endian, w*h*c values)}
///     -> 200 {"similarity": x, "queries_used": n, "budget_remaining": n | null}
///   GET /v1/targets
///     -> 200 {"targets": [{"target_id": str, "queries_used": n, "budget_remaining": n | null}]}
///   GET /v1/health
///     -> 200 {"status": "ok", "protocol_version": 1}
///
/// Errors use {"error_code": str, "message": str} with codes MALFORMED (400),
/// UNKNOWN_TARGET (404), VERSION_MISMATCH (409) and BUDGET_EXHAUSTED (429).
/// Similarities are sent as JSON doubles with round-trip precision.
inline constexpr int kProtocolVersion = 1;

/// Base64 of the pixels as little-endian f32.
std::string encode_pixels(std::span<const float> pixels);
/// Inverse of encode_pixels. Throws MalformedRequest on bad base64 or a
/// length that is not a multiple of 4 bytes.
std::vector<float> decode_pixels(std::string_view base64);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::optional<std::uint64_t> per_target_budget;
  int protocol_version = kProtocolVersion;
};

/// Serves any SimilarityOracle over HTTP. Each target has its own ledger;
/// a score is computed first and only released if the target's ledger
/// admits it, so concurrent clients can never receive more than `budget`
/// scores and malformed requests never cost budget.
class SimilarityServer {
 public:
  SimilarityServer(std::shared_ptr<SimilarityOracle> oracle, ServerOptions options);
  ~SimilarityServer();

  SimilarityServer(const SimilarityServer&) = delete;
  SimilarityServer& operator=(const SimilarityServer&) = delete;

  /// Binds and starts serving on a background thread. Throws ConnectionError
  /// if the address cannot be bound.
  void start();
  /// Stops accepting and joins the serving thread. Idempotent.
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

  int port() const;
  std::string address() const;  // host:port
  LedgerSnapshot target_ledger(const TargetId& target) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct RemoteOptions {
  std::optional<std::uint64_t> budget;
  int protocol_version = kProtocolVersion;
  /// Retries for connect failures only; those never reached the scorer.
  int connect_retries = 2;
  std::chrono::milliseconds timeout{30000};
};

struct ServerCounters {
  std::uint64_t queries_used = 0;
  std::optional<std::uint64_t> budget_remaining;
};

/// Oracle backed by a SimilarityServer. One request per query; the local
/// ledger counts scores this client received. Any failure after the request
/// may have been delivered is surfaced, never retried.
class RemoteOracle final : public SimilarityOracle {
 public:
  /// `address` is host:port (optionally prefixed with http://). Performs the
  /// health/version handshake; throws ConnectionError or ProtocolError.
  RemoteOracle(const std::string& address, TargetId target, RemoteOptions options = {});
  ~RemoteOracle() override;

  double query(const ImageTensor& image, const TargetId& target) override;
  LedgerSnapshot ledger() const override;
  std::vector<TargetId> targets() const override;

  /// Counters from the most recent successful response.
  ServerCounters last_server_counters() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<RemoteOracle> remote_oracle(const std::string& address, const TargetId& target,
                                            std::optional<std::uint64_t> budget);

}  // namespace eigenprobe
