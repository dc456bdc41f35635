#include "metaemb/split.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <json.hpp>

#include "metaemb/errors.hpp"
#include "metaemb/tensor.hpp"

namespace metaemb {

using nlohmann::json;

void SplitSpec::validate() const {
  if (batch_size == 0) throw ValidationError("split: K must be positive");
  if (new_min <= 3 * batch_size) {
    throw ValidationError("split: N_min (" + std::to_string(new_min) + ") must exceed 3K (" +
                          std::to_string(3 * batch_size) + ")");
  }
  if (old_threshold <= new_min) throw ValidationError("split: N must exceed N_min");
}

std::size_t OldNewSplit::old_samples() const {
  std::size_t n = 0;
  for (const auto& g : old_groups) n += g.count();
  return n;
}

std::size_t OldNewSplit::new_samples() const {
  std::size_t n = 0;
  for (const auto& g : new_groups) n += g.count();
  return n;
}

std::vector<AdGroup> group_by_ad(const Dataset& data) {
  std::vector<std::vector<std::size_t>> rows(data.schema().ad_vocab_size());
  for (std::size_t r = 0; r < data.size(); ++r) rows[data.ad_id(r)].push_back(r);
  std::vector<AdGroup> groups;
  for (std::size_t id = 0; id < rows.size(); ++id) {
    if (rows[id].empty()) continue;
    groups.push_back(AdGroup{static_cast<std::int32_t>(id), std::move(rows[id])});
  }
  return groups;
}

OldNewSplit split_old_new(std::vector<AdGroup> groups, const SplitSpec& spec) {
  spec.validate();
  OldNewSplit out;
  for (auto& g : groups) {
    if (g.count() > spec.old_threshold) {
      out.old_groups.push_back(std::move(g));
    } else if (g.count() > spec.new_min) {
      out.new_groups.push_back(std::move(g));
    } else {
      out.discarded.push_back(std::move(g));
    }
  }
  return out;
}

OldNewSplit split_old_new(const Dataset& data, const SplitSpec& spec) {
  return split_old_new(group_by_ad(data), spec);
}

WarmupCarve carve_warmup(const AdGroup& group, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ValidationError("carve_warmup: K must be positive");
  if (group.count() <= 3 * k) {
    throw ValidationError("carve_warmup: ad " + std::to_string(group.ad_id) + " has " +
                          std::to_string(group.count()) + " samples, needs more than " + std::to_string(3 * k));
  }
  std::vector<std::size_t> rows = group.rows;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(group.ad_id)));
  shuffle(rows, rng);
  WarmupCarve c;
  c.ad_id = group.ad_id;
  const auto it = rows.begin();
  const auto kk = static_cast<std::ptrdiff_t>(k);
  c.batch_a.assign(it, it + kk);
  c.batch_b.assign(it + kk, it + 2 * kk);
  c.batch_c.assign(it + 2 * kk, it + 3 * kk);
  c.holdout.assign(it + 3 * kk, rows.end());
  return c;
}

std::optional<MetaPair> sample_meta_pair(const AdGroup& group, std::size_t k, Rng& rng) {
  if (k == 0) throw ValidationError("sample_meta_pair: K must be positive");
  if (group.count() < 2 * k) return std::nullopt;
  // Partial Fisher-Yates: the first 2K positions become a uniform sample.
  std::vector<std::size_t> rows = group.rows;
  for (std::size_t i = 0; i < 2 * k; ++i) {
    std::swap(rows[i], rows[i + uniform_index(rng, rows.size() - i)]);
  }
  MetaPair p;
  p.batch_a.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
  p.batch_b.assign(rows.begin() + static_cast<std::ptrdiff_t>(k), rows.begin() + static_cast<std::ptrdiff_t>(2 * k));
  return p;
}

void mask_unseen_features(Dataset& data, std::span<const AdGroup> seen_groups) {
  const Schema& schema = data.schema();
  for (std::size_t f = 0; f < schema.size(); ++f) {
    if (f == schema.ad_id_field()) continue;
    std::vector<char> seen(schema.field(f).vocab_size, 0);
    for (const auto& g : seen_groups) {
      for (auto r : g.rows) {
        for (auto v : data.values(r, f)) seen[v] = 1;
      }
    }
    data.mask_unknown(f, seen);
  }
}

std::uint64_t dataset_fingerprint(const Dataset& data) {
  std::uint64_t h = 14695981039346656037ull;
  h = checksum_combine(h, data.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    h = checksum_combine(h, (static_cast<std::uint64_t>(data.ad_id(r)) << 1) | static_cast<std::uint64_t>(data.label(r)));
  }
  return h;
}

SplitManifest make_manifest(const Dataset& data, const SplitSpec& spec, std::uint64_t seed) {
  SplitManifest m;
  m.spec = spec;
  m.seed = seed;
  m.dataset_fingerprint = dataset_fingerprint(data);
  m.split = split_old_new(data, spec);
  m.carves.reserve(m.split.new_groups.size());
  for (const auto& g : m.split.new_groups) m.carves.push_back(carve_warmup(g, spec.batch_size, seed));
  return m;
}

namespace {

std::string ad_name(const Dataset& data, std::int32_t ad) {
  const auto& names = data.ad_names();
  return static_cast<std::size_t>(ad) < names.size() ? names[ad] : std::to_string(ad);
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const SplitManifest& m, const Dataset& data) {
  json j;
  j["format"] = "metaemb-split-manifest";
  j["version"] = 1;
  j["spec"] = {{"N", m.spec.old_threshold}, {"N_min", m.spec.new_min}, {"K", m.spec.batch_size}};
  j["seed"] = m.seed;
  j["dataset_fingerprint"] = m.dataset_fingerprint;
  auto ids = [&](const std::vector<AdGroup>& groups) {
    json arr = json::array();
    for (const auto& g : groups) arr.push_back({{"ad", g.ad_id}, {"name", ad_name(data, g.ad_id)}, {"n", g.count()}});
    return arr;
  };
  j["old"] = ids(m.split.old_groups);
  j["discarded"] = ids(m.split.discarded);
  json carves = json::array();
  for (const auto& c : m.carves) {
    carves.push_back({{"ad", c.ad_id},
                      {"name", ad_name(data, c.ad_id)},
                      {"batch_a", c.batch_a},
                      {"batch_b", c.batch_b},
                      {"batch_c", c.batch_c},
                      {"holdout", c.holdout}});
  }
  j["new"] = std::move(carves);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write manifest " + path.string());
  out << j.dump(1) << '\n';
}

SplitManifest read_manifest(const std::filesystem::path& path, const Dataset& data) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "metaemb-split-manifest" || j.value("version", 0) != 1) {
    throw ParseError("manifest " + path.string() + ": unsupported format");
  }
  SplitManifest m;
  m.spec.old_threshold = j.at("spec").at("N").get<std::size_t>();
  m.spec.new_min = j.at("spec").at("N_min").get<std::size_t>();
  m.spec.batch_size = j.at("spec").at("K").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.dataset_fingerprint = j.at("dataset_fingerprint").get<std::uint64_t>();
  if (m.dataset_fingerprint != dataset_fingerprint(data)) {
    throw ValidationError("manifest " + path.string() + " was written for a different dataset");
  }
  std::map<std::int32_t, AdGroup> by_id;
  for (auto& g : group_by_ad(data)) by_id.emplace(g.ad_id, std::move(g));
  auto take = [&](const json& arr, std::vector<AdGroup>& dst) {
    for (const auto& e : arr) {
      auto it = by_id.find(e.at("ad").get<std::int32_t>());
      if (it == by_id.end()) throw ValidationError("manifest refers to an ad absent from the dataset");
      dst.push_back(it->second);
    }
  };
  take(j.at("old"), m.split.old_groups);
  take(j.at("discarded"), m.split.discarded);
  for (const auto& e : j.at("new")) {
    WarmupCarve c;
    c.ad_id = e.at("ad").get<std::int32_t>();
    c.batch_a = e.at("batch_a").get<std::vector<std::size_t>>();
    c.batch_b = e.at("batch_b").get<std::vector<std::size_t>>();
    c.batch_c = e.at("batch_c").get<std::vector<std::size_t>>();
    c.holdout = e.at("holdout").get<std::vector<std::size_t>>();
    auto it = by_id.find(c.ad_id);
    if (it == by_id.end()) throw ValidationError("manifest refers to an ad absent from the dataset");
    m.split.new_groups.push_back(it->second);
    m.carves.push_back(std::move(c));
  }
  return m;
}

}  // namespace metaemb
