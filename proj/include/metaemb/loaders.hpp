#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "metaemb/dataset.hpp"

namespace metaemb {

// MovieLens-1M native files ("::"-separated, latin-1). The movie is the ad:
// title tokens, release year and genres are ad features; user id, age,
// gender and occupation are other features. Ratings >= 4 become label 1.
Dataset load_movielens(const std::filesystem::path& ratings, const std::filesystem::path& movies,
                       const std::filesystem::path& users);
Dataset load_movielens_dir(const std::filesystem::path& dir);

// Lowercased alphanumeric tokens of a title with the trailing "(YYYY)" removed.
struct TitleParts {
  std::vector<std::string> tokens;
  std::string year;  // empty when absent
};
TitleParts parse_title(std::string_view title);

// Generic CSV with a header row plus a JSON schema sidecar:
//   {"label": "<column>", "fields": [{"name", "kind", "group", "vocab_size"?}]}
// Token-list cells hold space-separated integers. Fields with "vocab_size"
// carry dense indices already; other fields are re-indexed in order of first
// appearance with 0 reserved.
Dataset load_csv_dataset(const std::filesystem::path& csv, const std::filesystem::path& schema_json);
void write_csv_dataset(const Dataset& data, const std::filesystem::path& csv, const std::filesystem::path& schema_json);

}  // namespace metaemb
