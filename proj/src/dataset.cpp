#include "metaemb/dataset.hpp"

#include <algorithm>

#include "metaemb/errors.hpp"

namespace metaemb {

std::string_view to_string(FieldKind kind) {
  return kind == FieldKind::categorical ? "categorical" : "token_list";
}

std::string_view to_string(FieldGroup group) {
  switch (group) {
    case FieldGroup::ad_id: return "ad_id";
    case FieldGroup::ad_feature: return "ad_feature";
    case FieldGroup::other_feature: return "other_feature";
  }
  return "?";
}

FieldKind parse_field_kind(std::string_view s) {
  if (s == "categorical") return FieldKind::categorical;
  if (s == "token_list") return FieldKind::token_list;
  throw ValidationError("unknown field kind '" + std::string(s) + "'");
}

FieldGroup parse_field_group(std::string_view s) {
  if (s == "ad_id") return FieldGroup::ad_id;
  if (s == "ad_feature") return FieldGroup::ad_feature;
  if (s == "other_feature") return FieldGroup::other_feature;
  throw ValidationError("unknown field group '" + std::string(s) + "'");
}

Schema::Schema(std::vector<FieldSpec> fields) : fields_(std::move(fields)) {
  std::size_t ad_fields = 0;
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    const auto& f = fields_[i];
    if (f.vocab_size == 0) throw ValidationError("field '" + f.name + "' has empty vocabulary");
    if (f.group == FieldGroup::ad_id) {
      if (f.kind != FieldKind::categorical) throw ValidationError("ad-ID field must be categorical");
      ad_id_field_ = i;
      ++ad_fields;
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (fields_[j].name == f.name) throw ValidationError("duplicate field name '" + f.name + "'");
    }
  }
  if (ad_fields != 1) {
    throw ValidationError("schema needs exactly one ad_id field, found " + std::to_string(ad_fields));
  }
}

std::vector<std::size_t> Schema::ad_feature_fields() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].group == FieldGroup::ad_feature) out.push_back(i);
  }
  return out;
}

std::size_t Schema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].name == name) return i;
  }
  throw ValidationError("no field named '" + std::string(name) + "'");
}

Dataset::Dataset(Schema schema) : schema_(std::move(schema)), columns_(schema_.size()) {}

void Dataset::add(const Instance& inst) {
  if (inst.label != 0 && inst.label != 1) {
    throw ValidationError("label must be 0 or 1, got " + std::to_string(inst.label));
  }
  if (inst.values.size() != schema_.size()) {
    throw ValidationError("instance has " + std::to_string(inst.values.size()) + " fields, schema has " +
                          std::to_string(schema_.size()));
  }
  const std::size_t adf = schema_.ad_id_field();
  for (std::size_t f = 0; f < schema_.size(); ++f) {
    const auto& spec = schema_.field(f);
    const auto& vals = inst.values[f];
    if (spec.kind == FieldKind::categorical && vals.size() != 1) {
      throw ValidationError("categorical field '" + spec.name + "' needs exactly one value");
    }
    for (auto v : vals) {
      if (v < 0 || static_cast<std::size_t>(v) >= spec.vocab_size) {
        throw IndexError("field '" + spec.name + "' index " + std::to_string(v) + " outside vocabulary of " +
                         std::to_string(spec.vocab_size));
      }
    }
  }
  if (inst.values[adf][0] != inst.ad_id) throw ValidationError("ad_id disagrees with the ad-ID field value");

  for (std::size_t f = 0; f < schema_.size(); ++f) {
    auto& col = columns_[f];
    col.indices.insert(col.indices.end(), inst.values[f].begin(), inst.values[f].end());
    col.offsets.push_back(static_cast<std::uint32_t>(col.indices.size()));
  }
  ad_ids_.push_back(inst.ad_id);
  labels_.push_back(static_cast<std::uint8_t>(inst.label));
}

std::span<const std::int32_t> Dataset::values(std::size_t row, std::size_t field) const {
  const auto& col = columns_[field];
  return std::span<const std::int32_t>(col.indices).subspan(col.offsets[row], col.offsets[row + 1] - col.offsets[row]);
}

Instance Dataset::instance(std::size_t row) const {
  if (row >= size()) throw IndexError("row " + std::to_string(row) + " out of range");
  Instance inst;
  inst.ad_id = ad_ids_[row];
  inst.label = labels_[row];
  inst.values.reserve(schema_.size());
  for (std::size_t f = 0; f < schema_.size(); ++f) {
    auto v = values(row, f);
    inst.values.emplace_back(v.begin(), v.end());
  }
  return inst;
}

void Dataset::mask_unknown(std::size_t field, const std::vector<char>& keep) {
  if (field == schema_.ad_id_field()) throw ValidationError("the ad-ID field cannot be masked");
  for (auto& v : columns_[field].indices) {
    if (static_cast<std::size_t>(v) >= keep.size() || !keep[v]) v = 0;
  }
}

std::int32_t Vocabulary::intern(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, static_cast<std::int32_t>(names_.size()));
  if (inserted) names_.push_back(token);
  return it->second;
}

std::int32_t Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

}  // namespace metaemb
