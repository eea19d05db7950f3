#pragma once

#include <map>
#include <string>

#include "grouplane/tensor.hpp"

namespace grouplane {

// Parameter checkpoint: versioned binary header, then one record per
// parameter in lexicographic name order: name length, name bytes, rank,
// extents, raw little-endian 32-bit floats.
void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& params);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

// Full-precision named arrays, used for exact training resume. Same layout
// as the checkpoint but with a distinct magic and 64-bit payloads.
void save_state_arrays(const std::string& path,
                       const std::map<std::string, std::vector<double>>& arrays);

std::map<std::string, std::vector<double>> load_state_arrays(
    const std::string& path);

}  // namespace grouplane
