#pragma once

#include <map>
#include <string>

#include "coroi/tensor.hpp"

namespace coroi {

// Named-tensor container. Layout: magic "CRT1", then per entry
// [u32 name length | UTF-8 name | u8 dtype tag (0=f32,1=f64) | u32 rank |
//  u64 extents... | little-endian scalar payload]. Little-endian throughout.
void write_checkpoint(const std::string& path,
                      const std::map<std::string, Tensor>& entries);

std::map<std::string, Tensor> read_checkpoint(const std::string& path);

}  // namespace coroi
