#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "protoconcepts/model.hpp"

namespace protoconcepts {

// Single-file checkpoint, little-endian:
//   magic "PCONCEPT" | u32 version | u32 geometry (0 log, 1 cosine)
//   | str backbone id | i32 image_size, latent_dim, m, C | f64 epsilon, min_radius
//   | u32 n, n x (u64 len, f64[len])  backbone parameters
//   | u32 n, n x (u64 len, f64[len])  add-on parameters
//   | f64[m*D] centers | f64[m] radius params | i32[m*C] assignment
//   | f64[m*C] evidence weights | i32[m] prune mask
//   | u32 n, n x (str key, str value) training metadata
// where str is u32 length followed by bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using CheckpointMetadata = std::map<std::string, std::string>;

struct Checkpoint {
  ProtoConceptsNet net;
  CheckpointMetadata metadata;
};

void save_checkpoint(const ProtoConceptsNet& net, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoconcepts
