#pragma once

// Checkpoint file layout (all integers and reals little-endian):
//   "HFCK" | u32 version | u32 header_len | header JSON (UTF-8)
//   u32 n_params | per param: u32 name_len, name, u32 ndim, u64 dims[ndim], f64 values[]
//   u64 adam_step | f64 lr, beta1, beta2, eps | u32 n_moments
//   per moment pair (ParameterStore order): f64 first[], f64 second[]

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsnerf/autodiff.hpp"
#include "hsnerf/optim.hpp"

namespace hsnerf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointData {
  nlohmann::json header;
  std::vector<NamedTensor> params;
  AdamState adam;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     const ParameterStore& params, const AdamState& adam);

CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Copies values into params by name; every block must be present with the
/// same shape, otherwise DataError.
void restore_parameters(const CheckpointData& ckpt, ParameterStore& params);

}  // namespace hsnerf
