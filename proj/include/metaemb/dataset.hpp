#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace metaemb {

enum class FieldKind { categorical, token_list };
enum class FieldGroup { ad_id, ad_feature, other_feature };

std::string_view to_string(FieldKind kind);
std::string_view to_string(FieldGroup group);
FieldKind parse_field_kind(std::string_view s);
FieldGroup parse_field_group(std::string_view s);

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  std::size_t vocab_size = 1;
  FieldGroup group = FieldGroup::other_feature;

  bool operator==(const FieldSpec&) const = default;
};

// Ordered field list with exactly one ad-ID field. Index 0 of every
// vocabulary is reserved for unknown values.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<FieldSpec> fields);

  const std::vector<FieldSpec>& fields() const { return fields_; }
  const FieldSpec& field(std::size_t i) const { return fields_[i]; }
  std::size_t size() const { return fields_.size(); }
  std::size_t ad_id_field() const { return ad_id_field_; }
  std::size_t ad_vocab_size() const { return fields_[ad_id_field_].vocab_size; }
  std::vector<std::size_t> ad_feature_fields() const;
  std::size_t index_of(std::string_view name) const;

  bool operator==(const Schema& other) const { return fields_ == other.fields_; }

 private:
  std::vector<FieldSpec> fields_;
  std::size_t ad_id_field_ = 0;
};

// One labeled example, materialised. values[f] holds the indices of field f;
// a categorical field has exactly one, the ad-ID field holds {ad_id}.
struct Instance {
  std::int32_t ad_id = 0;
  std::vector<std::vector<std::int32_t>> values;
  int label = 0;

  bool operator==(const Instance&) const = default;
};

// Column-oriented instance store.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(Schema schema);

  const Schema& schema() const { return schema_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  // Validates label, ad-ID consistency and vocabulary closure.
  void add(const Instance& inst);
  Instance instance(std::size_t row) const;

  std::int32_t ad_id(std::size_t row) const { return ad_ids_[row]; }
  int label(std::size_t row) const { return labels_[row]; }
  std::span<const std::int32_t> values(std::size_t row, std::size_t field) const;

  // Replaces every index of `field` for which keep[index] is false by 0.
  void mask_unknown(std::size_t field, const std::vector<char>& keep);

  // External identifiers for ad vocabulary indices (for manifests).
  const std::vector<std::string>& ad_names() const { return ad_names_; }
  void set_ad_names(std::vector<std::string> names) { ad_names_ = std::move(names); }

 private:
  struct Column {
    std::vector<std::uint32_t> offsets{0};
    std::vector<std::int32_t> indices;
  };

  Schema schema_;
  std::vector<std::int32_t> ad_ids_;
  std::vector<std::uint8_t> labels_;
  std::vector<Column> columns_;
  std::vector<std::string> ad_names_;
};

// Builds dense vocabularies with index 0 reserved.
class Vocabulary {
 public:
  Vocabulary() : names_{"<unk>"} {}
  std::int32_t intern(const std::string& token);
  // 0 when the token is unknown.
  std::int32_t find(const std::string& token) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace metaemb
