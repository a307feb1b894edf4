#include "eigenprobe/netbox.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include "eigenprobe/errors.hpp"
#define CPPHTTPLIB_TCP_NODELAY true
#include "httplib.h"
#include "json.hpp"

namespace eigenprobe {

using nlohmann::json;

std::string encode_pixels(std::span<const float> pixels) {
  std::string raw;
  raw.reserve(pixels.size() * 4);
  for (float f : pixels) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) raw.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  std::string out(4 * ((raw.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(raw.data()), static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<float> decode_pixels(std::string_view base64) {
  if (base64.size() % 4 != 0) throw MalformedRequest("pixels: base64 length is not a multiple of 4");
  std::string raw(3 * (base64.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(raw.data()),
                                reinterpret_cast<const unsigned char*>(base64.data()),
                                static_cast<int>(base64.size()));
  if (n < 0) throw MalformedRequest("pixels: invalid base64");
  // EVP_DecodeBlock counts padding as decoded zero bytes.
  std::size_t len = static_cast<std::size_t>(n);
  if (!base64.empty() && base64.back() == '=') --len;
  if (base64.size() >= 2 && base64[base64.size() - 2] == '=') --len;
  if (len % 4 != 0) throw MalformedRequest("pixels: payload is not a whole number of f32 values");
  std::vector<float> out(len / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

namespace {

json optional_count(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(nullptr); }

struct ApiError {
  int status;
  const char* code;
  std::string message;
};

void send_error(httplib::Response& res, const ApiError& err) {
  res.status = err.status;
  res.set_content(json{{"error_code", err.code}, {"message", err.message}}.dump(), "application/json");
}

ApiError malformed(std::string msg) { return {400, "MALFORMED", std::move(msg)}; }

}  // namespace

struct SimilarityServer::Impl {
  std::shared_ptr<SimilarityOracle> oracle;
  ServerOptions options;
  httplib::Server http;
  std::thread worker;
  int bound_port = -1;

  mutable std::mutex ledgers_mu;
  std::map<TargetId, std::unique_ptr<QueryLedger>> ledgers;
  bool closed_enrollment = false;  // true when the oracle lists its targets

  QueryLedger* ledger_for(const TargetId& id) {
    std::lock_guard lock(ledgers_mu);
    auto it = ledgers.find(id);
    if (it != ledgers.end()) return it->second.get();
    if (closed_enrollment) return nullptr;
    return ledgers.emplace(id, std::make_unique<QueryLedger>(options.per_target_budget)).first->second.get();
  }

  void handle_similarity(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, malformed(std::string("invalid JSON: ") + e.what()));
    }
    if (!body.is_object()) return send_error(res, malformed("request must be a JSON object"));
    if (!body.contains("protocol_version") || !body["protocol_version"].is_number_integer()) {
      return send_error(res, malformed("missing integer field protocol_version"));
    }
    if (body["protocol_version"].get<long long>() != options.protocol_version) {
      return send_error(res, {409, "VERSION_MISMATCH",
                              "server speaks protocol_version " + std::to_string(options.protocol_version)});
    }
    for (const char* field : {"width", "height", "channels"}) {
      if (!body.contains(field) || !body[field].is_number_unsigned()) {
        return send_error(res, malformed(std::string("missing non-negative integer field ") + field));
      }
    }
    if (!body.contains("target_id") || !body["target_id"].is_string() ||
        body["target_id"].get<std::string>().empty()) {
      return send_error(res, malformed("missing non-empty string field target_id"));
    }
    if (!body.contains("pixels") || !body["pixels"].is_string()) {
      return send_error(res, malformed("missing base64 string field pixels"));
    }

    const auto width = body["width"].get<std::uint64_t>();
    const auto height = body["height"].get<std::uint64_t>();
    const auto channels = body["channels"].get<std::uint64_t>();
    if (width == 0 || height == 0 || width > 65536 || height > 65536 || (channels != 1 && channels != 3)) {
      return send_error(res, malformed("invalid image dimensions"));
    }
    std::vector<float> pixels;
    try {
      pixels = decode_pixels(body["pixels"].get<std::string>());
    } catch (const MalformedRequest& e) {
      return send_error(res, malformed(e.what()));
    }
    if (pixels.size() != width * height * channels) {
      return send_error(res, malformed("pixels decode to " + std::to_string(pixels.size() * 4) +
                                       " bytes, expected w*h*c*4 = " +
                                       std::to_string(width * height * channels * 4)));
    }
    std::optional<ImageTensor> image;
    try {
      image.emplace(static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height),
                    static_cast<std::uint32_t>(channels), std::move(pixels));
    } catch (const Error& e) {
      return send_error(res, malformed(e.what()));
    }

    const TargetId target(body["target_id"].get<std::string>());
    QueryLedger* ledger = ledger_for(target);
    if (!ledger) return send_error(res, {404, "UNKNOWN_TARGET", "unknown target '" + target.str() + "'"});
    if (const auto rem = ledger->snapshot().remaining(); rem && *rem == 0) {
      return send_error(res, {429, "BUDGET_EXHAUSTED", "budget for '" + target.str() + "' is exhausted"});
    }

    double score = 0.0;
    try {
      score = oracle->query(*image, target);
    } catch (const UnknownTarget& e) {
      return send_error(res, {404, "UNKNOWN_TARGET", e.what()});
    } catch (const BudgetExhausted& e) {
      return send_error(res, {429, "BUDGET_EXHAUSTED", e.what()});
    } catch (const Error& e) {
      return send_error(res, malformed(e.what()));
    }
    // Check-and-increment is the admission decision; a score computed for a
    // request that loses the race is discarded.
    if (!ledger->try_consume()) {
      return send_error(res, {429, "BUDGET_EXHAUSTED", "budget for '" + target.str() + "' is exhausted"});
    }
    const auto snap = ledger->snapshot();
    res.set_content(json{{"similarity", score},
                         {"queries_used", snap.used},
                         {"budget_remaining", optional_count(snap.remaining())}}
                        .dump(),
                    "application/json");
  }

  void handle_targets(httplib::Response& res) {
    json list = json::array();
    std::lock_guard lock(ledgers_mu);
    for (const auto& [id, ledger] : ledgers) {
      const auto snap = ledger->snapshot();
      list.push_back({{"target_id", id.str()},
                      {"queries_used", snap.used},
                      {"budget_remaining", optional_count(snap.remaining())}});
    }
    res.set_content(json{{"targets", list}}.dump(), "application/json");
  }
};

SimilarityServer::SimilarityServer(std::shared_ptr<SimilarityOracle> oracle, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
  if (!oracle) throw InvalidArgument("server needs an oracle");
  impl_->oracle = std::move(oracle);
  impl_->options = std::move(options);
  const auto known = impl_->oracle->targets();
  impl_->closed_enrollment = !known.empty();
  for (const auto& id : known) {
    impl_->ledgers.emplace(id, std::make_unique<QueryLedger>(impl_->options.per_target_budget));
  }

  auto& http = impl_->http;
  http.set_keep_alive_max_count(1000000);
  // httplib defaults to SO_REUSEPORT, which would let two servers share a port.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  http.Post("/v1/similarity", [this](const httplib::Request& req, httplib::Response& res) {
    impl_->handle_similarity(req, res);
  });
  http.Get("/v1/targets", [this](const httplib::Request&, httplib::Response& res) { impl_->handle_targets(res); });
  http.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"status", "ok"}, {"protocol_version", impl_->options.protocol_version}}.dump(),
                    "application/json");
  });
}

SimilarityServer::~SimilarityServer() { stop(); }

void SimilarityServer::start() {
  if (impl_->worker.joinable()) return;
  auto& opts = impl_->options;
  if (opts.port == 0) {
    impl_->bound_port = impl_->http.bind_to_any_port(opts.host);
  } else {
    impl_->bound_port = impl_->http.bind_to_port(opts.host, opts.port) ? opts.port : -1;
  }
  if (impl_->bound_port < 0) {
    throw ConnectionError("cannot bind " + opts.host + ":" + std::to_string(opts.port));
  }
  impl_->worker = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

void SimilarityServer::stop() {
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

void SimilarityServer::wait() {
  if (impl_->worker.joinable()) impl_->worker.join();
}

int SimilarityServer::port() const { return impl_->bound_port; }

std::string SimilarityServer::address() const {
  return impl_->options.host + ":" + std::to_string(impl_->bound_port);
}

LedgerSnapshot SimilarityServer::target_ledger(const TargetId& target) const {
  std::lock_guard lock(impl_->ledgers_mu);
  auto it = impl_->ledgers.find(target);
  if (it == impl_->ledgers.end()) throw UnknownTarget("unknown target '" + target.str() + "'");
  return it->second->snapshot();
}

struct RemoteOracle::Impl {
  std::string host;
  int port = 0;
  TargetId target;
  RemoteOptions options;
  std::unique_ptr<httplib::Client> client;
  mutable std::mutex mu;
  QueryLedger ledger;
  ServerCounters last;

  Impl(std::string h, int p, TargetId t, RemoteOptions o)
      : host(std::move(h)), port(p), target(std::move(t)), options(o), ledger(o.budget) {}

  httplib::Result send(const std::function<httplib::Result()>& request) {
    for (int attempt = 0;; ++attempt) {
      auto result = request();
      if (result || result.error() != httplib::Error::Connection || attempt >= options.connect_retries) {
        return result;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
  }

  json parse_ok(const httplib::Result& result, const char* what) {
    if (!result) {
      throw ConnectionError(std::string(what) + " to " + host + ":" + std::to_string(port) +
                            " failed: " + httplib::to_string(result.error()));
    }
    json body;
    try {
      body = json::parse(result->body);
    } catch (const json::exception&) {
      throw ProtocolError(std::string(what) + ": server returned non-JSON (HTTP " +
                          std::to_string(result->status) + ")");
    }
    if (result->status != 200) {
      const std::string code = body.value("error_code", "");
      const std::string message = body.value("message", "");
      if (code == "BUDGET_EXHAUSTED") throw BudgetExhausted("server: " + message);
      if (code == "UNKNOWN_TARGET") throw UnknownTarget("server: " + message);
      if (code == "MALFORMED") throw MalformedRequest("server: " + message);
      if (code == "VERSION_MISMATCH") throw ProtocolError("server: " + message);
      throw ProtocolError(std::string(what) + ": HTTP " + std::to_string(result->status) + " " + message);
    }
    return body;
  }
};

namespace {

std::pair<std::string, int> split_address(std::string address) {
  if (address.starts_with("http://")) address = address.substr(7);
  if (!address.empty() && address.back() == '/') address.pop_back();
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) throw InvalidArgument("address must be host:port, got '" + address + "'");
  try {
    const int port = std::stoi(address.substr(colon + 1));
    if (port <= 0 || port > 65535) throw InvalidArgument("port out of range in '" + address + "'");
    return {address.substr(0, colon), port};
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad port in '" + address + "'");
  }
}

}  // namespace

RemoteOracle::RemoteOracle(const std::string& address, TargetId target, RemoteOptions options) {
  auto [host, port] = split_address(address);
  impl_ = std::make_unique<Impl>(std::move(host), port, std::move(target), options);
  impl_->client = std::make_unique<httplib::Client>(impl_->host, impl_->port);
  impl_->client->set_keep_alive(true);
  impl_->client->set_connection_timeout(options.timeout);
  impl_->client->set_read_timeout(options.timeout);
  impl_->client->set_write_timeout(options.timeout);

  auto& impl = *impl_;
  const auto body = impl.parse_ok(impl.send([&] { return impl.client->Get("/v1/health"); }), "health check");
  if (!body.contains("protocol_version") || !body["protocol_version"].is_number_integer()) {
    throw ProtocolError("health response lacks protocol_version");
  }
  const auto server_version = body["protocol_version"].get<long long>();
  if (server_version != options.protocol_version) {
    throw ProtocolError("protocol version mismatch: client " + std::to_string(options.protocol_version) +
                        ", server " + std::to_string(server_version));
  }
}

RemoteOracle::~RemoteOracle() = default;

double RemoteOracle::query(const ImageTensor& image, const TargetId& target) {
  auto& impl = *impl_;
  if (target != impl.target) {
    throw UnknownTarget("remote oracle is bound to '" + impl.target.str() + "', not '" + target.str() + "'");
  }
  std::lock_guard lock(impl.mu);
  if (const auto rem = impl.ledger.snapshot().remaining(); rem && *rem == 0) {
    throw BudgetExhausted("local budget of " + std::to_string(*impl.options.budget) + " exhausted");
  }
  const std::string payload = json{{"protocol_version", impl.options.protocol_version},
                                   {"target_id", target.str()},
                                   {"width", image.width()},
                                   {"height", image.height()},
                                   {"channels", image.channels()},
                                   {"pixels", encode_pixels(image.pixels())}}
                                  .dump();
  const auto body = impl.parse_ok(
      impl.send([&] { return impl.client->Post("/v1/similarity", payload, "application/json"); }), "query");
  if (!body.contains("similarity") || !body["similarity"].is_number()) {
    throw ProtocolError("response lacks a numeric similarity");
  }
  const double score = body["similarity"].get<double>();
  if (!std::isfinite(score)) throw ProtocolError("server returned a non-finite similarity");
  impl.last.queries_used = body.value("queries_used", std::uint64_t{0});
  impl.last.budget_remaining = body.contains("budget_remaining") && body["budget_remaining"].is_number_unsigned()
                                   ? std::optional<std::uint64_t>(body["budget_remaining"].get<std::uint64_t>())
                                   : std::nullopt;
  impl.ledger.try_consume();
  return score;
}

LedgerSnapshot RemoteOracle::ledger() const { return impl_->ledger.snapshot(); }

std::vector<TargetId> RemoteOracle::targets() const {
  auto& impl = *impl_;
  std::lock_guard lock(impl.mu);
  const auto body = impl.parse_ok(impl.send([&] { return impl.client->Get("/v1/targets"); }), "targets");
  std::vector<TargetId> ids;
  for (const auto& t : body.at("targets")) ids.emplace_back(t.at("target_id").get<std::string>());
  return ids;
}

ServerCounters RemoteOracle::last_server_counters() const {
  std::lock_guard lock(impl_->mu);
  return impl_->last;
}

std::unique_ptr<RemoteOracle> remote_oracle(const std::string& address, const TargetId& target,
                                            std::optional<std::uint64_t> budget) {
  RemoteOptions options;
  options.budget = budget;
  return std::make_unique<RemoteOracle>(address, target, options);
}

}  // namespace eigenprobe
