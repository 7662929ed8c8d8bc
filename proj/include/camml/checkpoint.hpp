#pragma once

#include <string>
#include <utility>
#include <vector>

#include "camml/tensor.hpp"

namespace camml {

// Checkpoint layout: magic "CMML", version u32, count u64, then per
// parameter: name length u32, name bytes, rank u32, dims u64 each,
// little-endian f64 payload.
inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params);

// Throws FormatError / VersionError / TruncatedFileError on bad files.
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace camml
