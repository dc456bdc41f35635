#pragma once

#include <filesystem>

#include "metaemb/meta.hpp"
#include "metaemb/model.hpp"

namespace metaemb {

// Binary container: 8-byte magic, u32 format version, u64 header length, a
// JSON header, then the raw little-endian doubles of every tensor in header
// order. Round trips are bit exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const std::filesystem::path& path, const BaseModel& model);
BaseModel load_model(const std::filesystem::path& path);

// Stores W, the pooling kind, the L2 coefficient and the checksum of the base
// model whose tables the generator reuses. Loading fails when `base` has a
// different checksum.
void save_generator(const std::filesystem::path& path, const Generator& gen, const BaseModel& base);
Generator load_generator(const std::filesystem::path& path, const BaseModel& base);

}  // namespace metaemb
