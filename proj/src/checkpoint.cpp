#include "conet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>

#include "conet/error.hpp"

namespace conet {

namespace {

constexpr std::string_view kMagic = "CONETCKPT";

template <typename T>
void put(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t k = 0; k < sizeof(T) / 2; ++k) std::swap(bytes[k], bytes[sizeof(T) - 1 - k]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw ConfigError("checkpoint truncated");
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t k = 0; k < sizeof(T) / 2; ++k) std::swap(raw[k], raw[sizeof(T) - 1 - k]);
    }
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ConfigError("checkpoint truncated");
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model, std::uint64_t split_fingerprint) {
  const ModelConfig& c = model.config();
  const ModelShape& s = model.shape();
  std::string out(kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.architecture));
  put<std::uint64_t>(out, c.embedding_dim);
  put<std::uint64_t>(out, c.hidden_widths.size());
  for (std::size_t w : c.hidden_widths) put<std::uint64_t>(out, w);
  put<double>(out, c.lasso_lambda);
  put<double>(out, c.csn_alpha_self);
  put<double>(out, c.csn_alpha_other);
  put<std::uint8_t>(out, c.share_user_embedding ? 1 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.init_scheme));
  put<std::uint64_t>(out, s.num_users);
  put<std::uint64_t>(out, s.num_target_items);
  put<std::uint64_t>(out, s.num_source_items);
  put<std::uint64_t>(out, split_fingerprint);
  std::uint64_t count = 0;
  for_each_tensor(model.params(), [&](ParamGroup, std::size_t, std::size_t,
                                      std::span<const double>) { ++count; });
  put<std::uint64_t>(out, count);
  for_each_tensor(model.params(), [&](ParamGroup, std::size_t rows, std::size_t cols,
                                      std::span<const double> values) {
    put<std::uint64_t>(out, rows);
    put<std::uint64_t>(out, cols);
    for (double v : values) put<double>(out, v);
  });
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw ConfigError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto arch = in.get<std::uint32_t>();
  if (arch > static_cast<std::uint32_t>(Architecture::kCoNet)) {
    throw ConfigError("unknown architecture tag " + std::to_string(arch));
  }
  ModelConfig config;
  config.architecture = static_cast<Architecture>(arch);
  config.embedding_dim = in.get<std::uint64_t>();
  const auto widths = in.get<std::uint64_t>();
  if (widths > 1024) throw ConfigError("implausible width count in checkpoint");
  config.hidden_widths.clear();
  for (std::uint64_t k = 0; k < widths; ++k) config.hidden_widths.push_back(in.get<std::uint64_t>());
  config.lasso_lambda = in.get<double>();
  config.csn_alpha_self = in.get<double>();
  config.csn_alpha_other = in.get<double>();
  config.share_user_embedding = in.get<std::uint8_t>() != 0;
  const auto scheme = in.get<std::uint32_t>();
  if (scheme > static_cast<std::uint32_t>(InitScheme::kFanIn)) {
    throw ConfigError("checkpoint: unknown init scheme " + std::to_string(scheme));
  }
  config.init_scheme = static_cast<InitScheme>(scheme);
  ModelShape shape;
  shape.num_users = in.get<std::uint64_t>();
  shape.num_target_items = in.get<std::uint64_t>();
  shape.num_source_items = in.get<std::uint64_t>();
  const auto fingerprint = in.get<std::uint64_t>();

  // Build a correctly shaped parameter set, then fill it tensor by tensor.
  Rng unused(0);
  Model shaped(config, shape, unused, 0.0);
  Parameters params = shaped.params();
  const auto count = in.get<std::uint64_t>();
  std::uint64_t seen = 0;
  for_each_tensor(params, [&](ParamGroup, std::size_t rows, std::size_t cols,
                              std::span<double> values) {
    if (seen++ >= count) throw ConfigError("checkpoint has too few tensors");
    const auto r = in.get<std::uint64_t>();
    const auto c = in.get<std::uint64_t>();
    if (r != rows || c != cols) {
      throw ConfigError("checkpoint tensor " + std::to_string(seen) + " is " + std::to_string(r) +
                        "x" + std::to_string(c) + ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
    for (double& v : values) v = in.get<double>();
  });
  if (seen != count || !in.done()) throw ConfigError("checkpoint has trailing or missing tensors");
  return {Model(config, shape, std::move(params)), fingerprint};
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     std::uint64_t split_fingerprint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(model, split_fingerprint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

}  // namespace conet
