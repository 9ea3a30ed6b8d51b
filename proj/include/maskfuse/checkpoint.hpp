#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "json.hpp"
#include "maskfuse/model.hpp"
#include "maskfuse/parameters.hpp"

namespace maskfuse {

// Versioned parameter container:
//   "MFCKPT\0\0" | u32 version | u64 header bytes | header JSON
//   | u64 tensor count | per tensor: u32 name bytes, name, u8 group, u32 rank,
//     u64 extents..., u32 pinned-row count, u64 rows..., f64 values...
// All integers and floats little-endian. The header carries the strategy tag,
// the full model config, the seed and free-form metadata (fold, split hash).
struct Checkpoint {
  std::string strategy;
  nlohmann::json model_config;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
  ParameterList parameters;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const Model& model, const ModelConfig& cfg, std::uint64_t seed,
                           nlohmann::json metadata = nlohmann::json::object());

// Rebuilds the model named by the checkpoint's strategy tag and loads its values.
std::unique_ptr<Model> load_model(const Checkpoint& ckpt);

// Typed loaders for members used to seed fine-tuning.
VisionPredictor load_vision_predictor(const Checkpoint& ckpt);
TabularPredictor load_tabular_predictor(const Checkpoint& ckpt);

}  // namespace maskfuse
