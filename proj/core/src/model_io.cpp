#include "dwiz/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace dwiz {
namespace {

static_assert(std::endian::native == std::endian::little, "model files are written in host order");

using Json = nlohmann::ordered_json;
using Kind = ModelFormatError::Kind;

constexpr std::size_t kHeaderSize = 16;
constexpr std::size_t kTrailerSize = 4;
const std::string kEncoderPrefix = "encoder/";

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(std::string_view bytes, std::size_t offset) {
  U value;
  std::memcpy(&value, bytes.data() + offset, sizeof(U));
  return value;
}

std::uint32_t crc(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(chunk));
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

Json dims_json(const ModelDims& d) {
  return Json{{"embedding_dim", d.embedding_dim}, {"hidden_dim", d.hidden_dim}, {"num_classes", d.num_classes}};
}

void add_tensors(Json& table, std::string& data, const nn::ConstParameterRefs<float>& params,
                 const std::string& prefix) {
  for (const auto& [name, t] : params) {
    table.push_back(Json{{"name", prefix + name}, {"shape", t->shape()}});
    data.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(float));
  }
}

Json encoder_metadata(const NoContextModel& m) {
  Json j;
  j["model_id"] = m.id();
  j["dims"] = dims_json(m.dims());
  j["max_len"] = m.max_len();
  j["tags"] = m.tags();
  j["vocabulary"] = Json{{"min_count", m.vocabulary().min_count()}, {"tokens", m.vocabulary().regular_tokens()}};
  j["parameter_checksum"] = hex32(m.checksum());
  return j;
}

std::string assemble(const Json& meta, const std::string& tensor_data) {
  const std::string meta_text = meta.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::string payload;
  payload.reserve(8 + meta_text.size() + tensor_data.size());
  put<std::uint64_t>(payload, meta_text.size());
  payload += meta_text;
  payload += tensor_data;

  std::string out;
  out.reserve(kHeaderSize + payload.size() + kTrailerSize);
  out.append(kModelMagic);
  put<std::uint32_t>(out, kModelFormatVersion);
  put<std::uint64_t>(out, payload.size());
  out += payload;
  put<std::uint32_t>(out, crc(payload));
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelFormatError(Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFormatError(Kind::Io, "failed writing " + path.string());
}

// Reads the tensors listed in `table` (optionally only those with `prefix`)
// into `params` by name.
class TensorReader {
 public:
  TensorReader(const Json& table, std::string_view data) {
    std::size_t offset = 0;
    for (const auto& entry : table) {
      Slot slot;
      slot.shape = entry.at("shape").get<std::vector<std::size_t>>();
      std::size_t n = 1;
      for (auto d : slot.shape) n *= d;
      slot.offset = offset;
      slot.count = n;
      offset += n * sizeof(float);
      slots_.emplace(entry.at("name").get<std::string>(), std::move(slot));
    }
    if (offset != data.size()) {
      throw ModelFormatError(Kind::Malformed, "tensor table describes " + std::to_string(offset) +
                                                  " bytes but the payload holds " + std::to_string(data.size()));
    }
    data_ = data;
  }

  void fill(const nn::ParameterRefs<float>& params, const std::string& prefix) {
    for (const auto& [name, t] : params) {
      auto it = slots_.find(prefix + name);
      if (it == slots_.end()) throw ModelFormatError(Kind::Malformed, "missing tensor '" + prefix + name + "'");
      const Slot& s = it->second;
      Tensor<float> loaded(s.shape);
      std::memcpy(loaded.data(), data_.data() + s.offset, s.count * sizeof(float));
      *t = std::move(loaded);
      ++used_;
    }
  }

  void expect_all_used() const {
    if (used_ != slots_.size()) throw ModelFormatError(Kind::Malformed, "model file has unexpected extra tensors");
  }

 private:
  struct Slot {
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
  };
  std::map<std::string, Slot> slots_;
  std::string_view data_;
  std::size_t used_ = 0;
};

ModelDims dims_from(const Json& j) {
  return {j.at("embedding_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>(),
          j.at("num_classes").get<std::size_t>()};
}

std::shared_ptr<const NoContextModel> read_encoder(const Json& meta, TensorReader& reader, const std::string& prefix) {
  const ModelDims dims = dims_from(meta.at("dims"));
  const auto& vj = meta.at("vocabulary");
  Vocabulary vocab(vj.at("tokens").get<std::vector<std::string>>(), vj.at("min_count").get<int>());
  auto net = NoContextNet<float>::zeros(vocab.size(), dims);
  reader.fill(net.parameters(), prefix);
  auto model = std::make_shared<NoContextModel>(std::move(vocab), meta.at("max_len").get<std::size_t>(),
                                                std::move(net), meta.at("tags").get<std::vector<std::string>>(),
                                                meta.at("model_id").get<std::string>());
  if (model->dims() != dims) throw ModelFormatError(Kind::Malformed, "tensor shapes disagree with declared dims");
  return model;
}

}  // namespace

std::string hex32(std::uint32_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(8, '0');
  for (int i = 7; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return s;
}

std::string serialize_model(const NoContextModel& model) {
  Json meta;
  meta["format"] = "dwiz-model";
  meta["kind"] = "no_context";
  meta.update(encoder_metadata(model));
  meta["gate_order"] = {"input", "forget", "cell", "output"};
  Json table = Json::array();
  std::string data;
  add_tensors(table, data, model.net().parameters(), "");
  meta["tensors"] = table;
  return assemble(meta, data);
}

std::string serialize_model(const ContextModel& model) {
  Json meta;
  meta["format"] = "dwiz-model";
  meta["kind"] = "context";
  meta["model_id"] = model.id();
  meta["context_size"] = model.context_size();
  meta["context_dims"] = Json{{"input_dim", model.net().context.input_dim()},
                              {"hidden_dim", model.net().context.hidden()},
                              {"num_classes", model.net().output.classes()}};
  meta["encoder"] = encoder_metadata(model.encoder());
  meta["gate_order"] = {"input", "forget", "cell", "output"};
  Json table = Json::array();
  std::string data;
  add_tensors(table, data, model.encoder().net().parameters(), kEncoderPrefix);
  add_tensors(table, data, model.net().parameters(), "");
  meta["tensors"] = table;
  return assemble(meta, data);
}

void save_model(const NoContextModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

void save_model(const ContextModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

LoadedModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < kModelMagic.size() || bytes.substr(0, kModelMagic.size()) != kModelMagic) {
    if (bytes.size() < kModelMagic.size()) throw ModelFormatError(Kind::Truncated, "model file truncated in header");
    throw ModelFormatError(Kind::BadMagic, "not a dwiz model file (bad magic)");
  }
  if (bytes.size() < kHeaderSize) throw ModelFormatError(Kind::Truncated, "model file truncated in header");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kModelFormatVersion) {
    throw ModelFormatError(Kind::Version, "model file format version " + std::to_string(version) +
                                              " is not supported (this build reads version " +
                                              std::to_string(kModelFormatVersion) + ")");
  }
  const auto payload_size = get<std::uint64_t>(bytes, 8);
  const std::size_t available = bytes.size() - kHeaderSize;
  if (payload_size > available || available - payload_size < kTrailerSize) {
    throw ModelFormatError(Kind::Truncated, "model file truncated: payload declares " + std::to_string(payload_size) +
                                                " bytes, " + std::to_string(available) + " present");
  }
  if (available - payload_size > kTrailerSize) {
    throw ModelFormatError(Kind::Malformed, "trailing bytes after model checksum");
  }
  const std::string_view payload = bytes.substr(kHeaderSize, payload_size);
  const auto stored = get<std::uint32_t>(bytes, kHeaderSize + payload_size);
  const auto actual = crc(payload);
  if (stored != actual) {
    throw ModelFormatError(Kind::Checksum,
                           "model checksum mismatch: stored " + hex32(stored) + ", computed " + hex32(actual));
  }

  if (payload.size() < 8) throw ModelFormatError(Kind::Malformed, "payload too short");
  const auto meta_size = get<std::uint64_t>(payload, 0);
  if (meta_size > payload.size() - 8) throw ModelFormatError(Kind::Malformed, "metadata length exceeds payload");

  try {
    const Json meta = Json::parse(payload.substr(8, meta_size));
    TensorReader reader(meta.at("tensors"), payload.substr(8 + meta_size));
    const std::string kind = meta.at("kind").get<std::string>();
    LoadedModel out;
    if (kind == "no_context") {
      out.kind = ModelKind::NoContext;
      out.no_context = read_encoder(meta, reader, "");
    } else if (kind == "context") {
      out.kind = ModelKind::Context;
      out.no_context = read_encoder(meta.at("encoder"), reader, kEncoderPrefix);
      const auto& cd = meta.at("context_dims");
      ModelDims cdims;
      cdims.hidden_dim = cd.at("hidden_dim").get<std::size_t>();
      cdims.num_classes = cd.at("num_classes").get<std::size_t>();
      auto net = ContextNet<float>::zeros(cd.at("input_dim").get<std::size_t>(), cdims);
      reader.fill(net.parameters(), "");
      out.context = std::make_shared<ContextModel>(out.no_context, std::move(net),
                                                   meta.at("context_size").get<std::size_t>(),
                                                   meta.at("model_id").get<std::string>());
    } else {
      throw ModelFormatError(Kind::Malformed, "unknown model kind '" + kind + "'");
    }
    reader.expect_all_used();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(Kind::Malformed, std::string("bad model metadata: ") + e.what());
  } catch (const ShapeError& e) {
    throw ModelFormatError(Kind::Malformed, std::string("inconsistent model tensors: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ModelFormatError(Kind::Malformed, std::string("invalid model metadata: ") + e.what());
  }
}

namespace {
std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError(Kind::Io, "cannot open model file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

LoadedModel load_model(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return deserialize_model(bytes);
  } catch (const ModelFormatError& e) {
    throw ModelFormatError(e.kind(), path.string() + ": " + e.what());
  }
}

std::shared_ptr<const NoContextModel> load_no_context_model(const std::filesystem::path& path) {
  auto loaded = load_model(path);
  if (loaded.kind != ModelKind::NoContext) {
    throw ModelFormatError(Kind::Malformed, path.string() + " holds a context model, expected a no-context model");
  }
  return loaded.no_context;
}

std::shared_ptr<const ContextModel> load_context_model(const std::filesystem::path& path) {
  auto loaded = load_model(path);
  if (loaded.kind != ModelKind::Context) {
    throw ModelFormatError(Kind::Malformed, path.string() + " holds a no-context model, expected a context model");
  }
  return loaded.context;
}

std::uint32_t file_crc32(const std::filesystem::path& path) { return crc(read_file(path)); }

std::uint32_t bytes_crc32(std::string_view bytes) { return crc(bytes); }

}  // namespace dwiz
