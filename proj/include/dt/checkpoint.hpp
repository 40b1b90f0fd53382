#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dt/model.hpp"

namespace dt {

// DTCK container: magic "DTCK", version u32, tensor count u32, then per
// tensor: name length u32 + UTF-8 name, rank u32, extents u32 each,
// little-endian f32 payload. Round trips byte-exactly.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor<float>>>& tensors);
std::vector<std::pair<std::string, Tensor<float>>> load_tensors(const std::string& path);

void save_checkpoint(const std::string& path, const ParamStore<float>& params);
// Fills an existing store; names and shapes must match exactly.
void load_checkpoint(const std::string& path, ParamStore<float>& params);

}  // namespace dt
