#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "metaemb/dataset.hpp"
#include "metaemb/random.hpp"

namespace metaemb {

// Old ads have more than `old_threshold` samples; new ads have
// new_min < N_i <= old_threshold. `batch_size` is K.
struct SplitSpec {
  std::size_t old_threshold = 300;
  std::size_t new_min = 80;
  std::size_t batch_size = 20;

  void validate() const;
};

struct AdGroup {
  std::int32_t ad_id = 0;
  std::vector<std::size_t> rows;  // dataset rows, in dataset order

  std::size_t count() const { return rows.size(); }
};

struct OldNewSplit {
  std::vector<AdGroup> old_groups;
  std::vector<AdGroup> new_groups;
  std::vector<AdGroup> discarded;

  std::size_t old_samples() const;
  std::size_t new_samples() const;
};

// Groups rows by ad, ascending ad index.
std::vector<AdGroup> group_by_ad(const Dataset& data);
OldNewSplit split_old_new(const Dataset& data, const SplitSpec& spec);
OldNewSplit split_old_new(std::vector<AdGroup> groups, const SplitSpec& spec);

struct WarmupCarve {
  std::int32_t ad_id = 0;
  std::vector<std::size_t> batch_a;
  std::vector<std::size_t> batch_b;
  std::vector<std::size_t> batch_c;
  std::vector<std::size_t> holdout;
};

// Seeded shuffle of the group; first 3K rows become batches a, b, c and the
// rest is held out. Requires N_i > 3K.
WarmupCarve carve_warmup(const AdGroup& group, std::size_t k, std::uint64_t seed);

struct MetaPair {
  std::vector<std::size_t> batch_a;
  std::vector<std::size_t> batch_b;
};

// 2K distinct rows drawn without replacement and split into two K-batches;
// nullopt when the group has fewer than 2K rows.
std::optional<MetaPair> sample_meta_pair(const AdGroup& group, std::size_t k, Rng& rng);

// Removes feature indices never seen in `seen_rows` (mapping them to the
// reserved index 0) for every non-ad-ID field.
void mask_unseen_features(Dataset& data, std::span<const AdGroup> seen_groups);

struct SplitManifest {
  SplitSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;
  OldNewSplit split;
  std::vector<WarmupCarve> carves;
};

std::uint64_t dataset_fingerprint(const Dataset& data);
SplitManifest make_manifest(const Dataset& data, const SplitSpec& spec, std::uint64_t seed);
void write_manifest(const std::filesystem::path& path, const SplitManifest& manifest, const Dataset& data);
// Rebuilds the split from the manifest against `data`; fails when the
// dataset fingerprint differs.
SplitManifest read_manifest(const std::filesystem::path& path, const Dataset& data);

}  // namespace metaemb
