#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gf3d/diffcore/nn.h"
#include "gf3d/diffcore/tensor.h"

namespace gf3d {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Named-tensor flat file:
//   "GF3DCKPT" | u64 header length | JSON header | raw values
// The header is {"tensors": [{"name": ..., "shape": [...]}, ...]}; values
// follow in header order as little-endian IEEE-754 doubles.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

void save_parameters(const std::filesystem::path& path, const ParameterStore& store);
// Copies every stored tensor into the matching parameter. Missing names or
// shape mismatches throw.
void load_parameters(const std::filesystem::path& path, ParameterStore& store);

}  // namespace gf3d
