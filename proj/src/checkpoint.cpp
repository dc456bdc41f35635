#include "metaemb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "metaemb/errors.hpp"

namespace metaemb {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'E', 'T', 'A', 'E', 'M', 'B', 'C'};

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

struct Container {
  json header;
  std::vector<Tensor> tensors;
};

void write_container(const std::filesystem::path& path, const json& header, std::span<const Tensor* const> tensors) {
  const std::string text = header.dump();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* t : tensors) {
      out.write(reinterpret_cast<const char*>(t->values().data()),
                static_cast<std::streamsize>(t->numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(path.string() + ": not a checkpoint");
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (length > (1u << 26)) throw ParseError(path.string() + ": header too large");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw ParseError(path.string() + ": truncated header");

  Container c;
  try {
    c.header = json::parse(text);
    if (c.header.at("kind").get<std::string>() != kind) {
      throw ParseError(path.string() + ": expected a " + kind + " checkpoint");
    }
    for (const auto& t : c.header.at("tensors")) {
      Shape shape = t.at("shape").get<Shape>();
      Tensor tensor(shape);
      in.read(reinterpret_cast<char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
      if (!in) throw ParseError(path.string() + ": truncated tensor data");
      c.tensors.push_back(std::move(tensor));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes");
  return c;
}

json schema_to_json(const Schema& schema) {
  json fields = json::array();
  for (const auto& f : schema.fields()) {
    fields.push_back({{"name", f.name},
                      {"kind", std::string(to_string(f.kind))},
                      {"group", std::string(to_string(f.group))},
                      {"vocab_size", f.vocab_size}});
  }
  return fields;
}

Schema schema_from_json(const json& fields) {
  std::vector<FieldSpec> specs;
  for (const auto& f : fields) {
    specs.push_back({f.at("name").get<std::string>(), parse_field_kind(f.at("kind").get<std::string>()),
                     f.at("vocab_size").get<std::size_t>(), parse_field_group(f.at("group").get<std::string>())});
  }
  return Schema(std::move(specs));
}

}  // namespace

void save_model(const std::filesystem::path& path, const BaseModel& model) {
  const auto& c = model.config();
  json header{{"kind", "base-model"},
              {"variant", std::string(to_string(c.variant))},
              {"embedding_dim", c.embedding_dim},
              {"hidden_dims", c.hidden_dims},
              {"init_stddev", c.init_stddev},
              {"seed", c.seed},
              {"fields", schema_to_json(model.schema())},
              {"checksum", model.checksum()}};
  json tensors = json::array();
  std::vector<const Tensor*> data;
  for (const auto& p : model.parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
    data.push_back(&p.value);
  }
  header["tensors"] = std::move(tensors);
  write_container(path, header, data);
}

BaseModel load_model(const std::filesystem::path& path) {
  auto c = read_container(path, "base-model");
  const json& h = c.header;
  try {
    ModelConfig config;
    config.variant = parse_variant(h.at("variant").get<std::string>());
    config.embedding_dim = h.at("embedding_dim").get<std::size_t>();
    config.hidden_dims = h.at("hidden_dims").get<std::vector<std::size_t>>();
    config.init_stddev = h.at("init_stddev").get<double>();
    config.seed = h.at("seed").get<std::uint64_t>();
    std::vector<Parameter> params;
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
      const auto& t = h.at("tensors")[i];
      params.push_back({t.at("name").get<std::string>(), std::move(c.tensors[i]), t.at("trainable").get<bool>()});
    }
    auto model = BaseModel::from_parts(config, schema_from_json(h.at("fields")), std::move(params));
    if (model.checksum() != h.at("checksum").get<std::uint64_t>()) {
      throw ParseError(path.string() + ": checksum mismatch");
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
}

void save_generator(const std::filesystem::path& path, const Generator& gen, const BaseModel& base) {
  json header{{"kind", "generator"},
              {"pooling", std::string(to_string(gen.pooling()))},
              {"l2", gen.l2()},
              {"base_checksum", base.checksum()},
              {"tensors", json::array({{{"name", "generator/W"}, {"shape", gen.weights().shape()}}})}};
  const Tensor* data[] = {&gen.weights()};
  write_container(path, header, data);
}

Generator load_generator(const std::filesystem::path& path, const BaseModel& base) {
  auto c = read_container(path, "generator");
  try {
    if (c.header.at("base_checksum").get<std::uint64_t>() != base.checksum()) {
      throw ValidationError(path.string() + ": generator was trained against a different base model");
    }
    if (c.tensors.size() != 1) throw ParseError(path.string() + ": expected one tensor");
    return Generator::from_parts(base, parse_pooling(c.header.at("pooling").get<std::string>()),
                                 c.header.at("l2").get<double>(), std::move(c.tensors[0]));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
}

}  // namespace metaemb
