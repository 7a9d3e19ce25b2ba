#include <bit>
#include <cstring>

#include "lmmtc/errors.hpp"
#include "lmmtc/io.hpp"
#include "lmmtc/model.hpp"

namespace lmmtc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLen = 6;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

// Zero-filled parameters with the shapes implied by the config.
ModelParams skeleton(const ModelConfig& config) {
  Pcg32 unused(0, 0);
  ModelConfig c = config;
  ModelParams p = init_params(c, unused);
  for (auto& [name, t] : p.named()) {
    Tensor h = t;
    h.mutable_value().setZero();
  }
  return p;
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config,
                                 std::uint64_t seed) {
  nlohmann::json header;
  header["config"] = config.to_json();
  header["seed"] = seed;
  header["prng"] = "pcg32";
  auto manifest = nlohmann::json::array();
  const auto named = params.named();
  for (const auto& [name, t] : named) manifest.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
  header["arrays"] = manifest;
  const std::string head = header.dump();

  std::string out(kCheckpointMagic, kMagicLen);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  for (const auto& [name, t] : named) {
    const Matrix& m = t.value();
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kCheckpointMagic) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  std::size_t off = kMagicLen;
  const auto version = take<std::uint16_t>(bytes, off);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto head_len = take<std::uint32_t>(bytes, off);
  if (off + head_len > bytes.size()) throw FormatError("checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(off, head_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  off += head_len;

  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_json(header.at("config"));
    ck.config.validate();
    ck.seed = header.at("seed").get<std::uint64_t>();
    if (header.at("prng").get<std::string>() != "pcg32") throw FormatError("checkpoint: unknown prng tag");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  ModelParams params = skeleton(ck.config);
  const auto named = params.named();
  const auto& manifest = header.at("arrays");
  if (manifest.size() != named.size()) throw FormatError("checkpoint: array manifest does not match config");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = manifest[i];
    Tensor t = named[i].second;
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (entry.at("name").get<std::string>() != named[i].first || shape.size() != 2 ||
        shape[0] != t.rows() || shape[1] != t.cols()) {
      throw FormatError("checkpoint: unexpected array " + entry.at("name").get<std::string>());
    }
    const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(double);
    if (off + n > bytes.size()) throw FormatError("checkpoint truncated in " + named[i].first);
    std::memcpy(t.mutable_value().data(), bytes.data() + off, n);
    off += n;
  }
  if (off != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  ck.params = std::move(params);
  return ck;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config, std::uint64_t seed,
                     const std::string& path) {
  io::write_file_atomic(path, serialize_checkpoint(params, config, seed));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace lmmtc
