#pragma once

// Checkpoint = JSON manifest + one flat little-endian float32 blob.
//
// Manifest (written to `<blob path>.json`):
//   {
//     "format": "coast-checkpoint-v1",
//     "blob": "<file name of the blob>",
//     "byte_order": "little",
//     "tensors": [{"name": ..., "shape": [rows, cols], "dtype": "f32",
//                  "offset": <bytes>, "nbytes": <bytes>}, ...],
//     "metadata": { ... caller-defined ... }
//   }
//
// Values are narrowed to float32 on save. Values that are already
// float32-representable round-trip bit-exactly.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "coast/tensor.hpp"

namespace coast {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

std::filesystem::path manifest_path(const std::filesystem::path& blob);

void save_checkpoint(const std::filesystem::path& blob, const ParamSet& params, const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& blob);

// Copies checkpoint values into matching parameters by name; every parameter
// must be present with the same shape.
void restore_params(const Checkpoint& ckpt, const ParamSet& params);

// Rounds every value to the nearest float32.
void round_to_f32(std::span<double> values);

}  // namespace coast
