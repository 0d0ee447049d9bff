#include "sara/model.hpp"

#include <map>

namespace sara::gen {

namespace {

using B = BlockSpec;
const Upsample U{};

const std::map<std::string, std::vector<LayoutStep>>& layouts() {
  static const std::map<std::string, std::vector<LayoutStep>> table{
      {"1-2-2", {B{256, 256}, U, B{256, 128}, B{128, 128}, U, B{128, 64}, B{64, 64}}},
      {"1-3-2", {B{256, 256}, U, B{256, 128}, B{128, 128}, B{128, 128}, U, B{128, 64}, B{64, 64}}},
      {"1-2-3", {B{256, 256}, U, B{256, 128}, B{128, 128}, U, B{128, 128}, B{128, 64}, B{64, 64}}},
      {"2-2-2", {B{256, 256}, B{256, 256}, U, B{256, 128}, B{128, 128}, U, B{128, 64}, B{64, 64}}},
      {"0-3-3", {U, B{256, 256}, B{256, 128}, B{128, 128}, U, B{128, 128}, B{128, 64}, B{64, 64}}},
      {"1-1-2", {B{256, 256}, U, B{256, 128}, U, B{128, 64}, B{64, 64}}},
      {"1-2-1", {B{256, 256}, U, B{256, 128}, B{128, 128}, U, B{128, 64}}},
      {"0-2-2", {U, B{256, 128}, B{128, 128}, U, B{128, 64}, B{64, 64}}},
      {"0-1-2", {U, B{256, 128}, U, B{128, 64}, B{64, 64}}},
  };
  return table;
}

}  // namespace

std::vector<BlockSpec> GeneratorConfig::blocks() const {
  std::vector<BlockSpec> out;
  for (const auto& s : steps)
    if (const auto* b = std::get_if<BlockSpec>(&s)) out.push_back(*b);
  return out;
}

int GeneratorConfig::upsample_count() const {
  int n = 0;
  for (const auto& s : steps) n += std::holds_alternative<Upsample>(s);
  return n;
}

const std::vector<std::string>& layout_names() {
  static const std::vector<std::string> names{"1-2-2", "1-3-2", "1-2-3", "2-2-2", "0-3-3",
                                              "1-1-2", "1-2-1", "0-2-2", "0-1-2"};
  return names;
}

GeneratorConfig build_layout(const std::string& name) {
  auto it = layouts().find(name);
  if (it == layouts().end()) throw ArgumentError("unknown generator layout '" + name + "'");
  GeneratorConfig cfg;
  cfg.layout = name;
  cfg.steps = it->second;
  return cfg;
}

void validate(const GeneratorConfig& cfg) {
  const auto blocks = cfg.blocks();
  if (blocks.empty()) throw ConfigError("generator layout has no fusion blocks");
  int channels = cfg.encoder_channels;
  for (const auto& b : blocks) {
    if (b.in != channels)
      throw ConfigError("generator layout '" + cfg.layout + "': block expects " + std::to_string(b.in) +
                        " channels but receives " + std::to_string(channels));
    if (b.out < 1) throw ConfigError("generator block with no output channels");
    channels = b.out;
  }
  if (cfg.upsample_count() != 2)
    throw ConfigError("generator layout must contain exactly two upsampling steps");
  if (cfg.head_hidden < 1 || cfg.style_dim < 1) throw ConfigError("modulation widths must be positive");
}

}  // namespace sara::gen
