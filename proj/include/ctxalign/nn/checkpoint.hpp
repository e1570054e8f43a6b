#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctxalign/nn/graph.hpp"

namespace ctxalign::nn {

// Binary layout (little-endian):
//   "CTXACKPT" | u32 version | u64 meta length | meta bytes | u64 tensor count
//   per tensor: u32 name length | name | u64 rows | u64 cols | rows*cols f64, row-major
struct Checkpoint {
  std::string metadata;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParameterSet& params, const std::string& metadata);
Checkpoint load_checkpoint(const std::string& path);
// Copies every tensor into the parameter of the same name; names and shapes must match exactly.
void restore(ParameterSet& params, const Checkpoint& checkpoint);

}  // namespace ctxalign::nn
