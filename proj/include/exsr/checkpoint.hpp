#pragma once

// Checkpoint archive layout (little endian):
//
//   8 bytes   magic "EXSRCKPT"
//   u32       format version (kCheckpointVersion)
//   u64       header length L
//   L bytes   JSON header: {"config": ModelConfig, "meta": {...},
//                           "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}]}
//   payload   raw tensor bytes, offsets relative to the payload start
//
// Writes go to "<path>.tmp" and are renamed into place.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "exsr/config.hpp"
#include "exsr/generator.hpp"

namespace exsr {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws IoError for unreadable or truncated files and ConfigError for a
/// foreign magic or an unsupported version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Adds every generator parameter and buffer under "generator/<name>".
void export_generator(const Generator& generator, Checkpoint& checkpoint);
/// Copies "generator/<name>" tensors into `generator`. Missing names or shape
/// mismatches raise ConfigError.
void import_generator(const Checkpoint& checkpoint, Generator& generator);

void save_generator(const std::filesystem::path& path, const Generator& generator);

/// Loads a generator from a generator or training checkpoint. When `expected`
/// is given its architecture must match the stored one.
Generator load_generator(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

/// SHA-256 over parameter names and bytes, hex encoded.
std::string parameter_digest(const torch::nn::Module& module);

}  // namespace exsr
