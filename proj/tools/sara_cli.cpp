// Command-line entry points: gen-data | train | infer | eval | serve.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
// single JSON line {"error": code, "message": ...} on stderr.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "sara/checkpoint.hpp"
#include "sara/evaluation.hpp"
#include "sara/runtime.hpp"
#include "sara/service.hpp"

namespace fs = std::filesystem;
using namespace sara;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;

  TrainConfig settings() const {
    TrainConfig cfg = config.empty() ? TrainConfig{} : load_config(config);
    if (seed) apply_setting(cfg, "seed", std::to_string(*seed));
    cfg.validate();
    return cfg;
  }
};

int fail(const std::string& code, const std::string& message, int status = 1) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << "\n";
  return status;
}

Face read_face(const fs::path& image, const fs::path& mask, int res) {
  if (mask.empty()) throw ArgumentError("missing_mask", "no label map given for " + image.string());
  return {load_image(image, res), resize(load_label_map(mask), res, res)};
}

/// "lip,eyes" or "lip:0,skin:1"; index 1 names the --ref2 face.
std::map<Region, int> parse_parts(const std::string& text) {
  std::map<Region, int> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const Region r = parse_region(item.substr(0, colon));
    int idx = 0;
    if (colon != std::string::npos) {
      try {
        idx = std::stoi(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ArgumentError("bad_part_reference", "bad reference index in '" + item + "'");
      }
    }
    if (!parts.emplace(r, idx).second)
      throw ArgumentError("duplicate_part", std::string("part '") + region_name(r) + "' given twice");
  }
  if (parts.empty()) throw ArgumentError("missing_parts", "--parts selects no part");
  return parts;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Controllable makeup transfer: data, training, inference, evaluation, service"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "Random seed (overrides the config file)");
  app.add_option("--config", common.config, "key=value settings file")->check(CLI::ExistingFile);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic paired dataset with manifest.tsv");
  std::string gen_out;
  int gen_n = 80;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Samples per domain")->check(CLI::PositiveNumber);

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset and write a checkpoint");
  std::string tr_data, tr_out, tr_metrics, tr_ckdir;
  std::optional<int> tr_steps;
  std::vector<std::string> tr_set;
  tr->add_option("--data", tr_data, "Dataset directory or manifest")->required();
  tr->add_option("--out", tr_out, "Final checkpoint path")->required();
  tr->add_option("--metrics", tr_metrics, "Per-step TSV log");
  tr->add_option("--checkpoint-dir", tr_ckdir, "Directory for intermediate checkpoints");
  tr->add_option("--steps", tr_steps, "Stop after this many steps")->check(CLI::PositiveNumber);
  tr->add_option("--set", tr_set, "Extra key=value setting (repeatable)");

  // infer
  auto* inf = app.add_subcommand("infer", "Run one transfer request");
  std::string inf_ckpt, inf_src, inf_src_mask, inf_out, inf_ref2 = "source", inf_ref2_mask, inf_parts,
                        inf_mode = "transfer", inf_dump;
  std::vector<std::string> inf_refs, inf_ref_masks;
  double inf_shade = 1.0;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--source", inf_src, "Source image")->required()->check(CLI::ExistingFile);
  inf->add_option("--source-mask", inf_src_mask, "Source label map")->required()->check(CLI::ExistingFile);
  inf->add_option("--ref", inf_refs, "Reference image (repeatable, up to 3)")->required()->check(CLI::ExistingFile);
  inf->add_option("--ref-mask", inf_ref_masks, "Reference label map, one per --ref")->check(CLI::ExistingFile);
  inf->add_option("--ref2", inf_ref2, "Second interpolant: 'source' or an image path");
  inf->add_option("--ref2-mask", inf_ref2_mask, "Label map of the --ref2 image");
  inf->add_option("--parts", inf_parts, "Parts to transfer, e.g. lip or lip:0,eyes:1");
  inf->add_option("--shade", inf_shade, "Shade in [0, 1]");
  inf->add_option("--mode", inf_mode, "transfer | removal");
  inf->add_option("--out", inf_out, "Output PNG")->required();
  inf->add_option("--dump-intermediates", inf_dump, "Directory for the warped reference and masks");

  // eval
  auto* ev = app.add_subcommand("eval", "Measure a checkpoint on held-out pairs");
  std::string ev_ckpt, ev_data, ev_out, ev_split = "test";
  std::size_t ev_limit = 8;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset directory or manifest")->required();
  ev->add_option("--split", ev_split, "Manifest split");
  ev->add_option("--limit", ev_limit, "Number of pairs");
  ev->add_option("--out", ev_out, "Report JSON (stdout when omitted)");

  // serve
  auto* sv = app.add_subcommand("serve", "Serve the HTTP API");
  std::string sv_ckpt, sv_host = "127.0.0.1", sv_gallery;
  int sv_port = 8080;
  sv->add_option("--ckpt", sv_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sv->add_option("--host", sv_host, "Bind address");
  sv->add_option("--port", sv_port, "Port (0 picks one)");
  sv->add_option("--gallery", sv_gallery, "Dataset directory served at /api/gallery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    return fail("usage", e.what(), 2);
  }

  try {
    const TrainConfig cfg = common.settings();

    if (*gen) {
      const auto m = synth::generate_dataset(gen_n, cfg.seed, gen_out, cfg.model.resolution);
      std::cout << "wrote " << m.entries.size() << " samples to " << gen_out << "\n";
      return 0;
    }

    if (*tr) {
      TrainConfig c = cfg;
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (tr_steps) c.max_steps = *tr_steps;
      c.validate();
      std::ofstream metrics;
      TrainHooks hooks;
      if (!tr_metrics.empty()) {
        metrics.open(tr_metrics, std::ios::trunc);
        if (!metrics) throw IoError("cannot write " + tr_metrics);
        hooks.metrics = &metrics;
      }
      hooks.checkpoint_dir = tr_ckdir;
      hooks.on_step = [](const StepReport& r) {
        if (r.step % 10 == 0)
          std::cerr << "step " << r.step << " total " << r.total << " makeup " << r.terms[3] << " d " << r.d_loss
                    << "\n";
      };
      auto t = train(synth::load_manifest(tr_data), c, hooks);
      save_checkpoint(*t, tr_out);
      std::cout << "wrote " << tr_out << " after " << t->steps_done() << " steps\n";
      return 0;
    }

    if (*inf) {
      auto trained = load_checkpoint(inf_ckpt);
      const int res = trained->model().config().resolution;
      if (inf_ref_masks.size() != inf_refs.size())
        throw ArgumentError("missing_mask", "give one --ref-mask per --ref");
      control::TransferRequest req;
      req.source = read_face(inf_src, inf_src_mask, res);
      for (std::size_t k = 0; k < inf_refs.size(); ++k) req.references.push_back(read_face(inf_refs[k], inf_ref_masks[k], res));
      if (inf_ref2 == "source") {
        req.second = control::Second::source;
      } else {
        if (req.references.size() != 1)
          throw ArgumentError("bad_second", "--ref2 with an image path needs exactly one --ref");
        req.references.push_back(read_face(inf_ref2, inf_ref2_mask, res));
        req.second = control::Second::ref2;
      }
      if (!inf_parts.empty()) req.parts = parse_parts(inf_parts);
      req.shade = inf_shade;
      req.mode = control::parse_mode(inf_mode);
      const auto out = control::transfer(trained->model(), req);
      save_image(out.image, inf_out);
      if (!inf_dump.empty()) {
        fs::create_directories(inf_dump);
        save_image(out.warped, fs::path(inf_dump) / "warped.png");
        for (int i = 0; i < 3; ++i) {
          Image m(3, out.warped_masks.height, out.warped_masks.width);
          for (int c = 0; c < 3; ++c) m.data.row(c) = out.warped_masks.data.row(i).array() * 2.0f - 1.0f;
          save_image(m, fs::path(inf_dump) / (std::string("warped_mask_") + region_name(kMakeupRegions[i]) + ".png"));
        }
      }
      std::cout << "wrote " << inf_out << "\n";
      return 0;
    }

    if (*ev) {
      auto trained = load_checkpoint(ev_ckpt);
      const auto m = synth::load_manifest(ev_data);
      const auto data = load_training_data(m, trained->model().config().resolution, ev_split);
      const auto report = eval::to_json(eval::evaluate(trained->model(), data.x, data.y, ev_limit));
      if (ev_out.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        std::ofstream out(ev_out, std::ios::trunc);
        out << report.dump(2) << "\n";
        if (!out) throw IoError("cannot write " + ev_out);
        std::cout << "wrote " << ev_out << "\n";
      }
      return 0;
    }

    if (*sv) {
      auto engine = std::make_shared<control::Engine>(load_checkpoint(sv_ckpt));
      std::optional<synth::Manifest> gallery;
      if (!sv_gallery.empty()) gallery = synth::load_manifest(sv_gallery);
      service::Api api(engine, gallery);
      service::HttpServer server(api);
      const int port = server.bind(sv_host, sv_port);
      std::cout << "listening on http://" << sv_host << ":" << port << "\n" << std::flush;
      server.run();
      return 0;
    }
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
