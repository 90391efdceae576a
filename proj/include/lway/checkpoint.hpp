#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lway/nn.hpp"

namespace lway::nn {

// On-disk layout: <dir>/manifest.json plus one raw little-endian float32
// row-major blob per tensor (<name>.bin, no header).
struct CheckpointTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

template <class T>
void append_parameters(Checkpoint& ckpt, const ParamSet<T>& params);

// Copies tensors into params by name; every parameter must be present with
// a matching shape.
template <class T>
void restore_parameters(const Checkpoint& ckpt, ParamSet<T>& params);

}  // namespace lway::nn
