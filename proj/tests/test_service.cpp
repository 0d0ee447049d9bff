#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"
#include "sara/service.hpp"

using namespace sara;
using namespace sara::service;
using fixture::face;
using synth::Domain;
using json = nlohmann::json;

namespace {

std::string b64_image(const Image& img) { return base64_encode(encode_png(img)); }
std::string b64_mask(const LabelMap& m) { return base64_encode(encode_label_png(m)); }

json body_for(const Face& src, const std::vector<Face>& refs) {
  json b{{"source_png_b64", b64_image(src.image)}, {"source_mask_png_b64", b64_mask(src.labels)}};
  b["references"] = json::array();
  for (const auto& r : refs) b["references"].push_back({{"image_png_b64", b64_image(r.image)}, {"mask_png_b64", b64_mask(r.labels)}});
  return b;
}

std::shared_ptr<control::Engine> engine() {
  return std::make_shared<control::Engine>(std::make_unique<Trainer>(fixture::tiny_config(5)));
}

}  // namespace

TEST_CASE("base64") {
  const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 252, 253, 'a'};
  for (std::size_t n = 0; n <= bytes.size(); ++n) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + std::ptrdiff_t(n));
    CHECK(base64_decode(base64_encode(part)) == part);
  }
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK(base64_decode("TWE") == std::vector<std::uint8_t>{'M', 'a'});
  CHECK(base64_decode("data:image/png;base64,TW Fu\n") == std::vector<std::uint8_t>{'M', 'a', 'n'});
  for (const char* bad : {"TW!u", "TWE=u", "T", "data:image/png;base64"}) {
    INFO(bad);
    try {
      base64_decode(bad);
      FAIL("accepted");
    } catch (const ArgumentError& e) {
      CHECK(e.code() == "bad_base64");
    }
  }
}

TEST_CASE("request parsing") {
  const auto x = face(21, Domain::x), y = face(22, Domain::y);
  auto b = body_for(x, {y, y});
  b["parts"] = {{"lip", 1}, {"eyes", 0}};
  b["shade"] = 0.25;
  b["second"] = "ref2";
  b["mode"] = "removal";
  const auto req = parse_transfer_request(b);
  CHECK(req.references.size() == 2);
  CHECK(req.parts.at(Region::lip) == 1);
  CHECK(req.parts.at(Region::eyes) == 0);
  CHECK(req.parts.count(Region::skin) == 0);
  CHECK(req.shade == 0.25);
  CHECK(req.second == control::Second::ref2);
  CHECK(req.mode == control::Mode::removal);
  CHECK(req.source.labels.labels == x.labels.labels);

  auto code = [](const json& body) {
    try {
      parse_transfer_request(body);
    } catch (const ArgumentError& e) {
      return e.code();
    }
    return std::string();
  };
  auto no_mask = body_for(x, {y});
  no_mask.erase("source_mask_png_b64");
  CHECK(code(no_mask) == "missing_mask");
  auto no_refs = body_for(x, {y});
  no_refs.erase("references");
  CHECK(code(no_refs) == "missing_reference");
  auto bad_part = body_for(x, {y});
  bad_part["parts"] = {{"nose", 0}};
  CHECK(code(bad_part) == "bad_part");
  auto not_png = body_for(x, {y});
  not_png["source_png_b64"] = base64_encode({1, 2, 3});
  CHECK(code(not_png) == "bad_image");
  CHECK(code(json::array()) == "bad_request");
}

TEST_CASE("api handlers") {
  const auto dir = fixture::fresh_dir("service_gallery");
  const auto manifest = synth::generate_dataset(2, 4, dir, 32);
  Api api(engine(), manifest);
  const auto x = face(23, Domain::x), y = face(24, Domain::y);

  CHECK(api.health().body == json{{"status", "ok"}, {"model_loaded", true}});

  const auto g = api.gallery();
  CHECK(g.status == 200);
  REQUIRE(g.body["entries"].size() == manifest.entries.size());
  CHECK(g.body["entries"][0]["id"] == manifest.entries[0].id);
  CHECK(g.body["entries"][0]["image_url"] == "/gallery/" + manifest.entries[0].image_path);

  const auto body = body_for(x, {y}).dump();
  const auto a = api.transfer(body), b = api.transfer(body);
  REQUIRE(a.status == 200);
  CHECK(a.body == b.body);
  const auto out = decode_png(base64_decode(a.body["result_png_b64"]));
  CHECK(out.height == 32);
  CHECK(decode_png(base64_decode(a.body["warped_png_b64"])).height == 16);

  SUBCASE("bad requests answer 400 with a code") {
    auto shade = body_for(x, {y});
    shade["shade"] = 2;
    const auto r = api.transfer(shade.dump());
    CHECK(r.status == 400);
    CHECK(r.body["error"] == "shade_out_of_range");
    CHECK(api.transfer("{").body["error"] == "bad_json");
    CHECK(api.transfer("{").status == 400);
  }
  SUBCASE("uploads of another size are resized to the model") {
    const auto big = api.transfer(body_for(face(23, Domain::x, 64), {face(24, Domain::y, 64)}).dump());
    CHECK(big.status == 200);
  }
  SUBCASE("without a gallery the list is empty") {
    Api bare(engine());
    CHECK(bare.gallery().body["entries"].empty());
  }
}

TEST_CASE("http server") {
  const auto dir = fixture::fresh_dir("service_http");
  const auto manifest = synth::generate_dataset(2, 4, dir, 32);
  Api api(engine(), manifest);
  HttpServer server(api);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.run(); });

  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(120, 0);
  const auto health = client.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");

  const auto gallery = client.Get("/api/gallery");
  REQUIRE(gallery);
  CHECK(json::parse(gallery->body) == api.gallery().body);
  const auto png = client.Get("/gallery/" + manifest.entries[0].image_path);
  REQUIRE(png);
  CHECK(png->status == 200);
  CHECK(decode_png({png->body.begin(), png->body.end()}).height == 32);

  const auto x = face(25, Domain::x), y = face(26, Domain::y);
  auto body = body_for(x, {y});
  const auto ok = client.Post("/api/transfer", body.dump(), "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(json::parse(ok->body) == api.transfer(body.dump()).body);
  body["shade"] = 2;
  const auto bad = client.Post("/api/transfer", body.dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body)["error"] == "shade_out_of_range");

  server.stop();
  loop.join();
}
