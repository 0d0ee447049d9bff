#include "sara/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>

namespace sara {

loss::LossWeights TrainConfig::effective_weights() const {
  auto w = weights;
  if (no_identity) w.id = 0.0;
  return w;
}

ForwardOptions TrainConfig::forward_options() const {
  ForwardOptions o;
  o.no_sam = no_sam;
  o.no_ram = no_ram;
  return o;
}

void TrainConfig::validate() const {
  if (batch_size != 1) throw ConfigError("batch_size must be 1");
  if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("learning rates must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (max_steps < 0 || checkpoint_interval < 0 || power_iterations < 0)
    throw ConfigError("step counts must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(model.align.sharpness > 0)) throw ConfigError("sharpness must be positive");
  gen::validate(model.generator);
}

TrainConfig ablate(TrainConfig cfg, const std::string& flag) {
  if (flag == "no_sam")
    cfg.no_sam = true;
  else if (flag == "no_ram")
    cfg.no_ram = true;
  else if (flag == "no_identity")
    cfg.no_identity = true;
  else
    throw ArgumentError("unknown ablation '" + flag + "' (expected no_sam|no_ram|no_identity)");
  return cfg;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key);
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

template <class T, class Field>
Setter number(Field field) {
  return [field](TrainConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"epochs", number<int>([](TrainConfig& c) -> int& { return c.epochs; })},
      {"max_steps", number<int>([](TrainConfig& c) -> int& { return c.max_steps; })},
      {"batch_size", number<int>([](TrainConfig& c) -> int& { return c.batch_size; })},
      {"beta1", number<double>([](TrainConfig& c) -> double& { return c.beta1; })},
      {"beta2", number<double>([](TrainConfig& c) -> double& { return c.beta2; })},
      {"adam_eps", number<double>([](TrainConfig& c) -> double& { return c.adam_eps; })},
      {"lr_g", number<double>([](TrainConfig& c) -> double& { return c.lr_g; })},
      {"lr_d", number<double>([](TrainConfig& c) -> double& { return c.lr_d; })},
      {"seed",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_number<std::uint64_t>(k, v);
         c.model.seed = c.seed;
       }},
      {"lambda_domain", number<double>([](TrainConfig& c) -> double& { return c.weights.domain; })},
      {"lambda_perc", number<double>([](TrainConfig& c) -> double& { return c.weights.perc; })},
      {"lambda_corr", number<double>([](TrainConfig& c) -> double& { return c.weights.corr; })},
      {"lambda_makeup", number<double>([](TrainConfig& c) -> double& { return c.weights.makeup; })},
      {"lambda_cycle", number<double>([](TrainConfig& c) -> double& { return c.weights.cycle; })},
      {"lambda_adv", number<double>([](TrainConfig& c) -> double& { return c.weights.adv; })},
      {"lambda_id", number<double>([](TrainConfig& c) -> double& { return c.weights.id; })},
      {"reduction", [](TrainConfig& c, const std::string&,
                       const std::string& v) { c.reduction = loss::parse_reduction(v); }},
      {"corr_mode", [](TrainConfig& c, const std::string&,
                       const std::string& v) { c.corr_mode = loss::parse_corr_mode(v); }},
      {"no_sam", [](TrainConfig& c, const std::string& k, const std::string& v) { c.no_sam = parse_bool(k, v); }},
      {"no_ram", [](TrainConfig& c, const std::string& k, const std::string& v) { c.no_ram = parse_bool(k, v); }},
      {"no_identity",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.no_identity = parse_bool(k, v); }},
      {"occluder",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.occluder = parse_bool(k, v); }},
      {"checkpoint_interval", number<int>([](TrainConfig& c) -> int& { return c.checkpoint_interval; })},
      {"power_iterations", number<int>([](TrainConfig& c) -> int& { return c.power_iterations; })},
      {"resolution", number<int>([](TrainConfig& c) -> int& { return c.model.resolution; })},
      {"layout",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         auto g = gen::build_layout(v);
         g.head_hidden = c.model.generator.head_hidden;
         c.model.generator = g;
       }},
      {"head_hidden", number<int>([](TrainConfig& c) -> int& { return c.model.generator.head_hidden; })},
      {"sharpness", number<double>([](TrainConfig& c) -> double& { return c.model.align.sharpness; })},
      {"critic_scales", number<int>([](TrainConfig& c) -> int& { return c.model.critic.scales; })},
  };
  return table;
}

}  // namespace

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

std::map<std::string, std::string> read_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  for (const auto& [k, v] : read_settings(path)) apply_setting(base, k, v);
  base.validate();
  return base;
}

nlohmann::json to_json(const TrainConfig& c) {
  const auto& w = c.weights;
  return {
      {"epochs", c.epochs},
      {"max_steps", c.max_steps},
      {"batch_size", c.batch_size},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_eps", c.adam_eps},
      {"lr_g", c.lr_g},
      {"lr_d", c.lr_d},
      {"seed", c.seed},
      {"weights",
       {{"domain", w.domain},
        {"perc", w.perc},
        {"corr", w.corr},
        {"makeup", w.makeup},
        {"cycle", w.cycle},
        {"adv", w.adv},
        {"id", w.id}}},
      {"reduction", loss::reduction_name(c.reduction)},
      {"corr_mode", loss::corr_mode_name(c.corr_mode)},
      {"no_sam", c.no_sam},
      {"no_ram", c.no_ram},
      {"no_identity", c.no_identity},
      {"occluder", c.occluder},
      {"checkpoint_interval", c.checkpoint_interval},
      {"power_iterations", c.power_iterations},
      {"model",
       {{"resolution", c.model.resolution},
        {"seed", c.model.seed},
        {"layout", c.model.generator.layout},
        {"head_hidden", c.model.generator.head_hidden},
        {"style_dim", c.model.generator.style_dim},
        {"encoder_channels", c.model.generator.encoder_channels},
        {"slope", c.model.generator.slope},
        {"feature_channels", c.model.align.feature_channels},
        {"hidden_channels", c.model.align.hidden_channels},
        {"sharpness", c.model.align.sharpness},
        {"cosine_eps", c.model.align.cosine_eps},
        {"critic_scales", c.model.critic.scales},
        {"critic_layers", c.model.critic.layers},
        {"critic_width", c.model.critic.base_width}}},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.epochs = j.at("epochs");
    c.max_steps = j.at("max_steps");
    c.batch_size = j.at("batch_size");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.adam_eps = j.at("adam_eps");
    c.lr_g = j.at("lr_g");
    c.lr_d = j.at("lr_d");
    c.seed = j.at("seed");
    const auto& w = j.at("weights");
    c.weights = {w.at("domain"), w.at("perc"), w.at("corr"), w.at("makeup"),
                 w.at("cycle"),  w.at("adv"),  w.at("id")};
    c.reduction = loss::parse_reduction(j.at("reduction"));
    c.corr_mode = loss::parse_corr_mode(j.at("corr_mode"));
    c.no_sam = j.at("no_sam");
    c.no_ram = j.at("no_ram");
    c.no_identity = j.at("no_identity");
    c.occluder = j.at("occluder");
    c.checkpoint_interval = j.at("checkpoint_interval");
    c.power_iterations = j.at("power_iterations");
    const auto& m = j.at("model");
    c.model.resolution = m.at("resolution");
    c.model.seed = m.at("seed");
    c.model.generator = gen::build_layout(m.at("layout"));
    c.model.generator.head_hidden = m.at("head_hidden");
    c.model.generator.style_dim = m.at("style_dim");
    c.model.generator.encoder_channels = m.at("encoder_channels");
    c.model.generator.slope = m.at("slope");
    c.model.align.feature_channels = m.at("feature_channels");
    c.model.align.hidden_channels = m.at("hidden_channels");
    c.model.align.sharpness = m.at("sharpness");
    c.model.align.cosine_eps = m.at("cosine_eps");
    c.model.critic.scales = m.at("critic_scales");
    c.model.critic.layers = m.at("critic_layers");
    c.model.critic.base_width = m.at("critic_width");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed config snapshot: ") + e.what());
  }
}

}  // namespace sara
