#include "setcomp/model.hpp"

#include "setcomp/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace setcomp {

namespace {

constexpr const char* kMagic = "SETCOMP-CHECKPOINT 1";

using json = nlohmann::json;

json encoder_to_json(const EncoderConfig& e) {
  return json{{"m", e.m}, {"backbone", to_string(e.backbone)}, {"input_size", e.input_size}, {"channels", e.channels}};
}

json model3_to_json(const Model3Config& c) {
  return json{{"image_dim", c.image_dim}, {"label_dim", c.label_dim}, {"n_classes", c.n_classes}, {"hidden", c.hidden}};
}

// Field access that reports the dotted path of whatever is missing or mistyped.
template <typename T>
T field(const json& j, const std::string& key, const std::string& path) {
  const auto full = path.empty() ? key : path + "." + key;
  if (!j.is_object() || !j.contains(key)) throw CheckpointError("checkpoint header: missing field '" + full + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw CheckpointError("checkpoint header: field '" + full + "' has the wrong type");
  }
}

void append_tensor(std::string& out, const Matrix<float>& m) {
  static_assert(sizeof(float) == 4);
  const auto n = static_cast<std::size_t>(m.size());
  const auto at = out.size();
  out.resize(at + n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    auto bits = std::bit_cast<std::uint32_t>(m.data()[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + at + i * 4, &bits, 4);
  }
}

Matrix<float> read_tensor(const std::string& bytes, std::size_t& pos, Eigen::Index rows, Eigen::Index cols) {
  Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + pos, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    m.data()[i] = std::bit_cast<float>(bits);
    pos += 4;
  }
  return m;
}

}  // namespace

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kUnion: return "union";
    case ModelKind::kContainment: return "containment";
    case ModelKind::kSupervised: return "supervised";
    case ModelKind::kTradEm: return "tradem";
    case ModelKind::kMultilabel: return "multilabel";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::kUnion, ModelKind::kContainment, ModelKind::kSupervised, ModelKind::kTradEm,
                 ModelKind::kMultilabel}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

ModelBundle make_bundle(ModelKind kind, const EncoderConfig& encoder, GVariant g, HVariant h,
                        const Model3Config& model3, std::uint64_t seed, double lr) {
  ModelBundle b;
  b.kind = kind;
  b.encoder = encoder;
  b.g = g;
  b.h = h;
  b.model3 = model3;
  b.seed = seed;
  b.optimizer = Adam<float>(Adam<float>::Settings{lr});
  if (kind == ModelKind::kSupervised || kind == ModelKind::kMultilabel) b.encoder.m = model3.image_dim;
  b.encoder.validate();
  Rng rng = make_rng({seed, 0x696e6974ULL});
  init_encoder(b.params, b.encoder, "f", rng);
  switch (kind) {
    case ModelKind::kUnion: init_g(b.params, g, b.encoder.m, "g", rng); break;
    case ModelKind::kContainment: init_h(b.params, h, b.encoder.m, "h", rng); break;
    case ModelKind::kSupervised:
      init_label_embedder(b.params, model3, "label", rng);
      init_model3_head(b.params, model3, "head", rng);
      break;
    case ModelKind::kMultilabel: init_multilabel_head(b.params, model3.image_dim, model3.n_classes, "ml", rng); break;
    case ModelKind::kTradEm: break;
  }
  return b;
}

std::string serialize_checkpoint(const ModelBundle& b) {
  const auto& opt = b.optimizer.settings();
  json header;
  header["kind"] = to_string(b.kind);
  header["encoder"] = encoder_to_json(b.encoder);
  header["g"] = to_string(b.g);
  header["h"] = to_string(b.h);
  header["model3"] = model3_to_json(b.model3);
  header["step"] = b.step;
  header["seed"] = b.seed;
  header["optimizer"] = json{{"name", "adam"},     {"lr", opt.lr},   {"beta1", opt.beta1},
                             {"beta2", opt.beta2}, {"eps", opt.eps}, {"t", b.optimizer.steps()}};
  header["extra"] = b.extra;
  json tensors = json::array();
  std::string payload;
  auto add = [&](const std::string& role, const ParamStore<float>& store) {
    for (const auto& e : store.entries()) {
      tensors.push_back(json{{"role", role},
                             {"name", e.name},
                             {"rows", e.value.rows()},
                             {"cols", e.value.cols()},
                             {"trainable", e.trainable}});
      append_tensor(payload, e.value);
    }
  };
  add("param", b.params);
  add("adam_m", b.optimizer.first_moment());
  add("adam_v", b.optimizer.second_moment());
  header["tensors"] = std::move(tensors);
  std::string out = kMagic;
  out += '\n';
  out += header.dump();
  out += '\n';
  out += payload;
  return out;
}

ModelBundle deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  const auto fail = [&](const std::string& what) { return CheckpointError(origin + ": " + what); };
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.compare(0, nl1, kMagic) != 0) throw fail("not a setcomp checkpoint");
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw fail("truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(nl1 + 1),
                         bytes.begin() + static_cast<std::ptrdiff_t>(nl2));
  } catch (const json::exception& e) {
    throw fail(std::string("corrupt header: ") + e.what());
  }
  ModelBundle b;
  try {
    b.kind = parse_model_kind(field<std::string>(header, "kind", ""));
    const auto& enc = header.at("encoder");
    b.encoder.m = field<int>(enc, "m", "encoder");
    b.encoder.backbone = parse_backbone(field<std::string>(enc, "backbone", "encoder"));
    b.encoder.input_size = field<int>(enc, "input_size", "encoder");
    b.encoder.channels = field<std::vector<int>>(enc, "channels", "encoder");
    b.g = parse_g_variant(field<std::string>(header, "g", ""));
    b.h = parse_h_variant(field<std::string>(header, "h", ""));
    const auto& m3 = header.at("model3");
    b.model3.image_dim = field<int>(m3, "image_dim", "model3");
    b.model3.label_dim = field<int>(m3, "label_dim", "model3");
    b.model3.n_classes = field<int>(m3, "n_classes", "model3");
    b.model3.hidden = field<int>(m3, "hidden", "model3");
    b.step = field<std::int64_t>(header, "step", "");
    b.seed = field<std::uint64_t>(header, "seed", "");
    const auto& opt = header.at("optimizer");
    Adam<float>::Settings s{field<double>(opt, "lr", "optimizer"), field<double>(opt, "beta1", "optimizer"),
                            field<double>(opt, "beta2", "optimizer"), field<double>(opt, "eps", "optimizer")};
    const auto t = field<long long>(opt, "t", "optimizer");
    b.extra = header.contains("extra") ? header.at("extra") : json::object();
    if (!header.contains("tensors") || !header.at("tensors").is_array()) throw fail("header has no tensor list");
    const auto& tensors = header.at("tensors");
    std::size_t expected = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto path = "tensors[" + std::to_string(i) + "]";
      const auto rows = field<long long>(tensors[i], "rows", path);
      const auto cols = field<long long>(tensors[i], "cols", path);
      if (rows < 0 || cols < 0) throw fail("negative shape in " + path);
      expected += static_cast<std::size_t>(rows * cols) * 4;
    }
    const std::size_t actual = bytes.size() - (nl2 + 1);
    if (actual != expected) {
      throw fail("payload has " + std::to_string(actual) + " bytes but the header describes " +
                 std::to_string(expected) + (actual < expected ? " (truncated)" : ""));
    }
    ParamStore<float> m;
    ParamStore<float> v;
    std::size_t pos = nl2 + 1;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto path = "tensors[" + std::to_string(i) + "]";
      const auto role = field<std::string>(tensors[i], "role", path);
      const auto name = field<std::string>(tensors[i], "name", path);
      auto value = read_tensor(bytes, pos, field<long long>(tensors[i], "rows", path),
                               field<long long>(tensors[i], "cols", path));
      const bool trainable = field<bool>(tensors[i], "trainable", path);
      if (role == "param") {
        b.params.add(name, std::move(value), trainable);
      } else if (role == "adam_m") {
        m.add(name, std::move(value), trainable);
      } else if (role == "adam_v") {
        v.add(name, std::move(value), trainable);
      } else {
        throw fail("unknown tensor role '" + role + "' in " + path + ".role");
      }
    }
    b.optimizer.restore(s, t, std::move(m), std::move(v));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e.what());
  }
  return b;
}

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle) {
  const auto bytes = serialize_checkpoint(bundle);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace setcomp
