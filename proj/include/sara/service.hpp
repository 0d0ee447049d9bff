#pragma once

// HTTP/JSON front of the transfer engine. The handlers are plain functions of
// the request body so they can be exercised without a socket.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sara/control.hpp"

namespace sara::service {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Standard alphabet, padding optional; whitespace and an optional
/// "data:...;base64," prefix are skipped. Throws ArgumentError("bad_base64").
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Decodes the JSON body of POST /api/transfer. Throws ArgumentError with a
/// stable code on malformed input.
control::TransferRequest parse_transfer_request(const nlohmann::json& body);

nlohmann::json manifest_json(const synth::Manifest& m);

struct Response {
  int status = 200;
  nlohmann::json body;
};

class Api {
 public:
  Api(std::shared_ptr<control::Engine> engine, std::optional<synth::Manifest> gallery = std::nullopt)
      : engine_(std::move(engine)), gallery_(std::move(gallery)) {}

  Response health() const;
  Response gallery() const;
  /// 200 {result_png_b64, warped_png_b64}; 400 {error, message} for bad
  /// requests; 500 {error:"internal", id} otherwise.
  Response transfer(const std::string& body);

  const std::optional<synth::Manifest>& manifest() const { return gallery_; }

 private:
  std::shared_ptr<control::Engine> engine_;
  std::optional<synth::Manifest> gallery_;
  std::atomic<std::uint64_t> failures_{0};
};

/// Socket front of an Api. Gallery files are mounted under /gallery/ when a
/// manifest is present.
class HttpServer {
 public:
  explicit HttpServer(Api& api);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sara::service
