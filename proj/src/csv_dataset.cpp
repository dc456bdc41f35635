#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_map>

#include "metaemb/errors.hpp"
#include "metaemb/loaders.hpp"

namespace metaemb {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

struct ColumnPlan {
  FieldSpec spec;
  std::size_t column = 0;
  bool dense = false;  // cells are already vocabulary indices
  Vocabulary vocab;
};

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& csv, const std::filesystem::path& schema_json) {
  std::ifstream sj(schema_json);
  if (!sj) throw ParseError("cannot open " + schema_json.string());
  json schema;
  try {
    schema = json::parse(sj);
  } catch (const json::exception& e) {
    throw ParseError(schema_json.string() + ": " + e.what());
  }

  std::ifstream in(csv);
  if (!in) throw ParseError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(csv.string() + ": missing header row");
  const auto header = split_csv_line(line);
  auto column_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ParseError(csv.string() + ": header has no column '" + name + "'");
  };

  const std::size_t label_col = column_of(schema.at("label").get<std::string>());
  std::vector<ColumnPlan> plans;
  for (const auto& f : schema.at("fields")) {
    ColumnPlan p;
    p.spec.name = f.at("name").get<std::string>();
    p.spec.kind = parse_field_kind(f.at("kind").get<std::string>());
    p.spec.group = parse_field_group(f.at("group").get<std::string>());
    p.column = column_of(p.spec.name);
    if (f.contains("vocab_size")) {
      p.dense = true;
      p.spec.vocab_size = f.at("vocab_size").get<std::size_t>();
    }
    plans.push_back(std::move(p));
  }

  std::vector<Instance> rows;
  std::vector<std::string> ad_names;
  std::size_t line_no = 1;
  std::size_t ad_field = plans.size();
  for (std::size_t f = 0; f < plans.size(); ++f) {
    if (plans[f].spec.group == FieldGroup::ad_id) ad_field = f;
  }
  if (ad_field == plans.size()) throw ValidationError(schema_json.string() + ": no ad_id field");

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(csv.filename().string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    Instance inst;
    const auto& lab = cells[label_col];
    if (lab != "0" && lab != "1") {
      throw ParseError(csv.filename().string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    }
    inst.label = lab == "1";
    for (auto& p : plans) {
      std::vector<std::int32_t> vals;
      std::istringstream toks(cells[p.column]);
      std::string tok;
      while (toks >> tok) {
        if (p.dense) {
          std::size_t used = 0;
          long v = -1;
          try {
            v = std::stol(tok, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used != tok.size() || v < 0) {
            throw ParseError(csv.filename().string() + ":" + std::to_string(line_no) + ": bad index '" + tok + "'");
          }
          vals.push_back(static_cast<std::int32_t>(v));
        } else {
          vals.push_back(p.vocab.intern(tok));
        }
      }
      inst.values.push_back(std::move(vals));
    }
    if (inst.values[ad_field].size() != 1) {
      throw ParseError(csv.filename().string() + ":" + std::to_string(line_no) + ": ad id cell must hold one value");
    }
    inst.ad_id = inst.values[ad_field][0];
    rows.push_back(std::move(inst));
  }

  std::vector<FieldSpec> specs;
  for (auto& p : plans) {
    if (!p.dense) p.spec.vocab_size = p.vocab.size();
    specs.push_back(p.spec);
  }
  Dataset data{Schema(std::move(specs))};
  if (!plans[ad_field].dense) data.set_ad_names(plans[ad_field].vocab.names());
  for (const auto& r : rows) data.add(r);
  return data;
}

void write_csv_dataset(const Dataset& data, const std::filesystem::path& csv, const std::filesystem::path& schema_json) {
  const Schema& schema = data.schema();
  json fields = json::array();
  for (const auto& f : schema.fields()) {
    fields.push_back({{"name", f.name},
                      {"kind", std::string(to_string(f.kind))},
                      {"group", std::string(to_string(f.group))},
                      {"vocab_size", f.vocab_size}});
  }
  {
    std::ofstream out(schema_json);
    if (!out) throw ValidationError("cannot write " + schema_json.string());
    out << json{{"label", "label"}, {"fields", fields}}.dump(2) << '\n';
  }
  std::ofstream out(csv);
  if (!out) throw ValidationError("cannot write " + csv.string());
  for (const auto& f : schema.fields()) out << f.name << ',';
  out << "label\n";
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t f = 0; f < schema.size(); ++f) {
      auto vals = data.values(r, f);
      for (std::size_t k = 0; k < vals.size(); ++k) {
        if (k) out << ' ';
        out << vals[k];
      }
      out << ',';
    }
    out << data.label(r) << '\n';
  }
}

}  // namespace metaemb
