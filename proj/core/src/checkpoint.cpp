#include "msct/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "config_json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace msct {

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'S', 'C', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return value;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  return detail::model_config_json(cfg).dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    detail::apply_model_config(j, cfg);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(out, kCheckpointVersion);

  const std::string header = model_config_to_json(model.config());
  write_pod(out, static_cast<std::uint64_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  const auto params = model.named_params();
  write_pod(out, static_cast<std::uint64_t>(params.size()));
  for (const auto& np : params) {
    write_pod(out, static_cast<std::uint32_t>(np.name.size()));
    out.write(np.name.data(), static_cast<std::streamsize>(np.name.size()));
    const auto& shape = np.tensor.shape();
    write_pod(out, static_cast<std::uint32_t>(shape.size()));
    for (std::int64_t dim : shape) write_pod(out, dim);
    auto values = np.tensor.data();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " +
                             path.string());
  }

  const auto header_len = read_pod<std::uint64_t>(in, path);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path.string());
  const ModelConfig cfg = model_config_from_json(header);

  std::mt19937_64 rng(0);  // initialization is overwritten below
  Model model(cfg, rng);
  auto params = model.named_params();

  const auto n_stored = read_pod<std::uint64_t>(in, path);
  if (n_stored != params.size()) {
    throw std::runtime_error("checkpoint stores " + std::to_string(n_stored) +
                             " parameter arrays, model expects " + std::to_string(params.size()) +
                             ": " + path.string());
  }
  for (auto& np : params) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    if (name != np.name) {
      throw std::runtime_error("checkpoint parameter '" + name + "' does not match expected '" +
                               np.name + "': " + path.string());
    }
    const auto ndim = read_pod<std::uint32_t>(in, path);
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = read_pod<std::int64_t>(in, path);
    if (dims != np.tensor.shape()) {
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               shape_to_string(dims) + ", expected " +
                               shape_to_string(np.tensor.shape()) + ": " + path.string());
    }
    auto& values = np.tensor.mutable_values();
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint values for '" + name + "': " +
                                      path.string());
    if (!all_finite(values)) {
      throw std::runtime_error("checkpoint parameter '" + name + "' contains non-finite values: " +
                               path.string());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("trailing bytes after checkpoint payload: " + path.string());
  }
  return model;
}

}  // namespace msct
