#include "sara/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

namespace sara {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'R', 'A', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <class M>
struct Tensor {
  std::string name;
  M* value;
};

/// Every stored tensor in container order; T is Trainer or const Trainer.
template <class T, class M = std::conditional_t<std::is_const_v<T>, const Mat<float>, Mat<float>>>
std::vector<Tensor<M>> tensors(T& t) {
  std::vector<Tensor<M>> out;
  for (auto& p : t.model().generator_params().all()) out.push_back({p.name, &p.value});
  for (auto& p : t.model().critic_params().all()) out.push_back({p.name, &p.value});
  auto moments = [&](auto& opt, const std::string& tag) {
    for (std::size_t i = 0; i < opt.params().size(); ++i)
      out.push_back({tag + ".m:" + opt.params()[i]->name, &opt.first_moments()[i]});
    for (std::size_t i = 0; i < opt.params().size(); ++i)
      out.push_back({tag + ".v:" + opt.params()[i]->name, &opt.second_moments()[i]});
  };
  moments(t.generator_optimizer(), "adam_g");
  moments(t.critic_optimizer(), "adam_d");
  return out;
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Trainer& t) {
  const auto list = tensors(t);
  std::vector<std::uint8_t> payload;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& e : list) {
    shapes.push_back({{"name", e.name}, {"rows", e.value->rows()}, {"cols", e.value->cols()}});
    const auto bytes = std::size_t(e.value->size()) * sizeof(float);
    const auto* src = reinterpret_cast<const std::uint8_t*>(e.value->data());
    payload.insert(payload.end(), src, src + bytes);
  }
  nlohmann::json header{
      {"format", "sara-checkpoint"},
      {"version", kCheckpointVersion},
      {"step", t.steps_done()},
      {"adam_g_steps", t.generator_optimizer().steps()},
      {"adam_d_steps", t.critic_optimizer().steps()},
      {"config", to_json(t.config())},
      {"tensors", shapes},
      {"payload_bytes", payload.size()},
      {"fnv1a64", hex(fnv1a(payload.data(), payload.size()))},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::unique_ptr<Trainer> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw IntegrityError("checkpoint truncated: missing preamble");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
  if (len > bytes.size() - 16) throw IntegrityError("checkpoint truncated inside the header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != "sara-checkpoint") throw FormatError("checkpoint header has the wrong format tag");
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");

  const std::size_t offset = 16 + std::size_t(len);
  const std::size_t payload_bytes = header.at("payload_bytes");
  if (bytes.size() - offset != payload_bytes)
    throw IntegrityError("checkpoint payload has " + std::to_string(bytes.size() - offset) + " bytes, header declares " +
                         std::to_string(payload_bytes));
  if (hex(fnv1a(bytes.data() + offset, payload_bytes)) != header.at("fnv1a64").get<std::string>())
    throw IntegrityError("checkpoint checksum mismatch");

  auto trainer = std::make_unique<Trainer>(train_config_from_json(header.at("config")));
  auto list = tensors(*trainer);
  const auto& shapes = header.at("tensors");
  if (shapes.size() != list.size()) throw FormatError("checkpoint tensor list does not match the configured model");
  std::size_t pos = offset;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& s = shapes[i];
    auto* m = list[i].value;
    if (s.at("name").get<std::string>() != list[i].name || s.at("rows").get<Eigen::Index>() != m->rows() ||
        s.at("cols").get<Eigen::Index>() != m->cols())
      throw FormatError("checkpoint tensor '" + s.at("name").get<std::string>() + "' does not match the model");
    const auto n = std::size_t(m->size()) * sizeof(float);
    std::memcpy(m->data(), bytes.data() + pos, n);
    pos += n;
  }
  trainer->set_steps_done(header.at("step"));
  trainer->generator_optimizer().set_steps(header.at("adam_g_steps"));
  trainer->critic_optimizer().set_steps(header.at("adam_d_steps"));
  return trainer;
}

void save_checkpoint(const Trainer& t, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(t);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace sara
