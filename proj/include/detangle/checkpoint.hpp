#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "detangle/linalg.hpp"

namespace detangle {

// Versioned binary tensor container (see docs/formats.md).
//
// Layout, little-endian:
//   magic "DTNS" | u32 version | u64 tensor count | entries
// entry:
//   u32 name length | name bytes | u64 rows | u64 cols | rows*cols f64 values
// Entries are written in the order given, values row-major. Writing the same
// tensors twice produces byte-identical files.
constexpr uint32_t kCheckpointVersion = 1;

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Matrix*>>& tensors);

std::map<std::string, Matrix> load_tensors(const std::string& path);

}  // namespace detangle
