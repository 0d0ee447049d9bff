#include "sara/service.hpp"

#include <array>
#include <cstdio>
#include <iostream>

#include "httplib.h"

namespace sara::service {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

ArgumentError bad_request(const std::string& code, const std::string& what) { return ArgumentError(code, what); }

const nlohmann::json& field(const nlohmann::json& obj, const char* key, const std::string& code) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw bad_request(code, std::string("missing field '") + key + "'");
  return *it;
}

std::string text_field(const nlohmann::json& obj, const char* key, const std::string& code) {
  const auto& v = field(obj, key, code);
  if (!v.is_string()) throw bad_request("bad_request", std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

Image decode_image(const std::string& b64, const std::string& what) {
  try {
    return decode_png(base64_decode(b64));
  } catch (const FormatError& e) {
    throw bad_request("bad_image", what + ": " + e.what());
  }
}

LabelMap decode_mask(const std::string& b64, const std::string& what) {
  try {
    return decode_label_png(base64_decode(b64));
  } catch (const FormatError& e) {
    throw bad_request("missing_mask", what + ": " + e.what());
  }
}

Face decode_face(const nlohmann::json& obj, const char* image_key, const char* mask_key, const std::string& what) {
  Face f;
  f.image = decode_image(text_field(obj, image_key, "bad_image"), what + " image");
  f.labels = decode_mask(text_field(obj, mask_key, "missing_mask"), what + " mask");
  return f;
}

/// Uploads of another size are brought to the model resolution.
void fit(Face& f, int res) {
  if (f.image.height != res || f.image.width != res) f.image = resize(f.image, res, res, ResizeMode::bilinear);
  if (f.labels.height != res || f.labels.width != res) f.labels = resize(f.labels, res, res, ResizeMode::nearest);
}

nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t v = std::uint32_t(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= std::uint32_t(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) v |= bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[v & 63] : '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[std::uint8_t(kAlphabet[i])] = i;
  std::size_t start = 0;
  if (text.rfind("data:", 0) == 0) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw ArgumentError("bad_base64", "data URL without payload");
    start = comma + 1;
  }
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  bool padded = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const unsigned char c = std::uint8_t(text[i]);
    if (std::isspace(c)) continue;
    if (c == '=') {
      padded = true;
      continue;
    }
    if (padded || lut[c] < 0) throw ArgumentError("bad_base64", "invalid base64 payload");
    acc = (acc << 6) | std::uint32_t(lut[c]);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(std::uint8_t(acc >> bits));
    }
  }
  if (bits >= 6) throw ArgumentError("bad_base64", "truncated base64 payload");
  return out;
}

control::TransferRequest parse_transfer_request(const nlohmann::json& body) {
  if (!body.is_object()) throw bad_request("bad_request", "request body must be a JSON object");
  control::TransferRequest req;
  req.source = decode_face(body, "source_png_b64", "source_mask_png_b64", "source");

  const auto& refs = field(body, "references", "missing_reference");
  if (!refs.is_array()) throw bad_request("bad_request", "'references' must be an array");
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (!refs[k].is_object()) throw bad_request("bad_request", "each reference must be an object");
    req.references.push_back(decode_face(refs[k], "image_png_b64", "mask_png_b64", "reference " + std::to_string(k)));
  }

  if (auto it = body.find("parts"); it != body.end() && !it->is_null()) {
    if (!it->is_object()) throw bad_request("bad_request", "'parts' must be an object");
    if (it->empty()) throw bad_request("missing_parts", "at least one part must be selected");
    for (const auto& [name, idx] : it->items()) {
      Region r;
      try {
        r = parse_region(name);
      } catch (const Error&) {
        throw bad_request("bad_part", "unknown part '" + name + "'");
      }
      if (!idx.is_number_integer()) throw bad_request("bad_part_reference", "part index must be an integer");
      req.parts[r] = idx.get<int>();
    }
  }

  if (auto it = body.find("shade"); it != body.end() && !it->is_null()) {
    if (!it->is_number()) throw bad_request("bad_request", "'shade' must be a number");
    req.shade = it->get<double>();
  }
  if (auto it = body.find("second"); it != body.end() && !it->is_null())
    req.second = control::parse_second(it->is_string() ? it->get<std::string>() : "");
  if (auto it = body.find("mode"); it != body.end() && !it->is_null())
    req.mode = control::parse_mode(it->is_string() ? it->get<std::string>() : "");
  return req;
}

nlohmann::json manifest_json(const synth::Manifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"id", e.id},
                       {"domain", synth::domain_name(e.domain)},
                       {"image_path", e.image_path},
                       {"mask_path", e.mask_path},
                       {"image_url", "/gallery/" + e.image_path},
                       {"mask_url", "/gallery/" + e.mask_path},
                       {"seed", e.seed},
                       {"split", e.split}});
  return {{"entries", entries}};
}

Response Api::health() const { return {200, {{"status", "ok"}, {"model_loaded", engine_ != nullptr}}}; }

Response Api::gallery() const {
  if (!gallery_) return {200, {{"entries", nlohmann::json::array()}}};
  return {200, manifest_json(*gallery_)};
}

Response Api::transfer(const std::string& body) {
  try {
    auto req = parse_transfer_request(nlohmann::json::parse(body));
    const int res = engine_->model().config().resolution;
    fit(req.source, res);
    for (auto& r : req.references) fit(r, res);
    const auto out = engine_->run(req);
    return {200,
            {{"result_png_b64", base64_encode(encode_png(out.image))},
             {"warped_png_b64", base64_encode(encode_png(out.warped))}}};
  } catch (const nlohmann::json::parse_error& e) {
    return {400, error_body("bad_json", e.what())};
  } catch (const ArgumentError& e) {
    return {400, error_body(e.code(), e.what())};
  } catch (const std::exception& e) {
    char id[32];
    std::snprintf(id, sizeof id, "E%06llu", static_cast<unsigned long long>(++failures_));
    std::cerr << "transfer failure " << id << ": " << e.what() << "\n";
    return {500, {{"error", "internal"}, {"id", id}}};
  }
}

struct HttpServer::Impl {
  Api& api;
  httplib::Server server;
  explicit Impl(Api& a) : api(a) {}
};

HttpServer::HttpServer(Api& api) : impl_(std::make_unique<Impl>(api)) {
  auto& svr = impl_->server;
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  svr.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, impl_->api.health());
  });
  svr.Get("/api/gallery", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, impl_->api.gallery());
  });
  svr.Post("/api/transfer", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, impl_->api.transfer(req.body));
  });
  if (api.manifest()) svr.set_mount_point("/gallery", api.manifest()->root.string());
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int p = svr.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!svr.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace sara::service
