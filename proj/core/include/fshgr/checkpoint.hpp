#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fshgr/params.hpp"

namespace fshgr {

// "FSH1" checkpoint: magic bytes, then one record per tensor:
//   u32 name length | name bytes | u32 rank | u32 dims[rank] | float32 LE payload
// Records run to end of file.

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params);
std::vector<CheckpointTensor> load_checkpoint(const std::filesystem::path& path);

// Matches records to entries by name; shapes must agree. Throws FormatError
// with the offending tensor named on any mismatch or missing entry.
void load_checkpoint_into(const std::filesystem::path& path, ParamSet<float>& params);

}  // namespace fshgr
