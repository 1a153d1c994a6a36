#pragma once

#include "setcomp/blocks.hpp"
#include "setcomp/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace setcomp {

// Which networks a bundle holds. Parameter prefixes: "f" encoder, "g"
// composition head, "h" query head, "label" label embedder, "head" Model III
// head, "ml" multilabel head.
enum class ModelKind { kUnion, kContainment, kSupervised, kTradEm, kMultilabel };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct ModelBundle {
  ModelKind kind = ModelKind::kUnion;
  EncoderConfig encoder;
  GVariant g = GVariant::kLin;
  HVariant h = HVariant::kDNN;
  Model3Config model3;
  ParamStore<float> params;
  Adam<float> optimizer;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  // Free-form provenance (training and data settings); saved verbatim.
  nlohmann::json extra = nlohmann::json::object();
};

// Fresh parameters drawn from a generator derived from `seed`.
ModelBundle make_bundle(ModelKind kind, const EncoderConfig& encoder, GVariant g, HVariant h,
                        const Model3Config& model3, std::uint64_t seed, double lr = 1e-3);

// Container: a magic line, one line of JSON header (configs, step, seed,
// optimizer settings, tensor names and shapes), then every tensor as
// little-endian float32 in header order.
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_checkpoint(const std::filesystem::path& path);

// The same container in memory.
std::string serialize_checkpoint(const ModelBundle& bundle);
ModelBundle deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace setcomp
