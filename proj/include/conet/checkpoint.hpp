#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "conet/models.hpp"

namespace conet {

// Binary layout, all integers and floats little-endian:
//
//   "CONETCKPT"                 9 bytes, no terminator
//   version                     u32 (kCheckpointVersion)
//   architecture                u32 (Architecture value)
//   embedding_dim               u64
//   width count, widths         u64, u64 × count
//   lasso_lambda                f64
//   csn_alpha_self, _other      f64, f64
//   share_user_embedding        u8
//   init_scheme                 u32 (InitScheme value)
//   num_users, target items,
//   source items                u64 × 3
//   split fingerprint           u64
//   tensor count                u64
//   tensors                     (rows u64, cols u64, rows·cols f64 row-major)
//
// Tensors follow for_each_tensor order; vectors are stored as len × 1.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::uint64_t split_fingerprint = 0;
};

std::string serialize_checkpoint(const Model& model, std::uint64_t split_fingerprint);
/// Throws ConfigError for a bad magic, unsupported version or shape mismatch.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     std::uint64_t split_fingerprint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace conet
