#include "exsr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "exsr/errors.hpp"
#include "exsr/hashing.hpp"

namespace exsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'X', 'S', 'R', 'C', 'K', 'P', 'T'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32:
      return "f32";
    case torch::kFloat64:
      return "f64";
    case torch::kUInt8:
      return "u8";
    case torch::kInt64:
      return "i64";
    default:
      throw Error(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "u8") return torch::kUInt8;
  if (s == "i64") return torch::kInt64;
  throw ConfigError("checkpoint: unknown dtype '" + s + "'");
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  json header;
  header["config"] = checkpoint.config;
  header["meta"] = checkpoint.meta;
  header["tensors"] = json::array();
  std::vector<torch::Tensor> payload;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    auto t = tensor.detach().cpu().contiguous();
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(std::move(t));
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kCheckpointVersion);
    write_pod<uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payload) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    out.flush();
    if (!out) throw IoError("write to " + tmp.string() + " failed (disk full?)");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError(path.string() + " is not an exsr checkpoint");
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = read_pod<uint64_t>(in);
  if (!in || header_len > (uint64_t{1} << 32)) throw IoError("checkpoint header is truncated");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("checkpoint header is truncated");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint header is corrupt: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.meta = header.value("meta", json::object());
  const auto payload_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto nbytes = entry.at("nbytes").get<uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from_name(entry.at("dtype"))));
    if (static_cast<uint64_t>(t.numel()) * t.element_size() != nbytes) {
      throw IoError("checkpoint entry '" + name + "' has inconsistent size");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IoError("checkpoint payload is truncated at '" + name + "'");
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void export_generator(const Generator& generator, Checkpoint& checkpoint) {
  for (const auto& p : generator->named_parameters(true)) checkpoint.tensors["generator/" + p.key()] = p.value();
  for (const auto& b : generator->named_buffers(true)) checkpoint.tensors["generator/" + b.key()] = b.value();
}

void import_generator(const Checkpoint& checkpoint, Generator& generator) {
  torch::NoGradGuard no_grad;
  const auto copy = [&](const std::string& name, torch::Tensor& dst) {
    auto it = checkpoint.tensors.find("generator/" + name);
    if (it == checkpoint.tensors.end()) throw ConfigError("checkpoint lacks generator tensor '" + name + "'");
    if (it->second.sizes() != dst.sizes()) throw ConfigError("checkpoint tensor '" + name + "' has the wrong shape");
    dst.copy_(it->second);
  };
  for (auto& p : generator->named_parameters(true)) copy(p.key(), p.value());
  for (auto& b : generator->named_buffers(true)) copy(b.key(), b.value());
}

void save_generator(const fs::path& path, const Generator& generator) {
  Checkpoint ckpt;
  ckpt.config = generator->config();
  ckpt.meta = {{"kind", "generator"}};
  export_generator(generator, ckpt);
  write_checkpoint(path, ckpt);
}

Generator load_generator(const fs::path& path, const ModelConfig* expected) {
  Checkpoint ckpt = read_checkpoint(path);
  if (expected != nullptr) require_same_architecture(expected->arch, ckpt.config.arch);
  Generator gen = build_generator(ckpt.config, 0);
  import_generator(ckpt, gen);
  return gen;
}

std::string parameter_digest(const torch::nn::Module& module) {
  Sha256 h;
  for (const auto& p : module.named_parameters(true)) {
    h.update(p.key());
    auto t = p.value().detach().cpu().contiguous();
    h.update(std::span<const uint8_t>(static_cast<const uint8_t*>(t.data_ptr()), t.numel() * t.element_size()));
  }
  return h.hex_digest();
}

}  // namespace exsr
