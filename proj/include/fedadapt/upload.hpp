#pragma once

#include <vector>

#include "fedadapt/param_set.hpp"

namespace fedadapt {

enum class UploadMode { kFull, kDelta };

// What one client sends to the server after local training: shared tensors
// only. `groups` routes group-adapter aggregation.
struct Upload {
  int client_id = 0;
  ParamSet tensors;  // every entry tagged shared
  std::size_t example_count = 0;
  std::vector<int> groups;
  UploadMode mode = UploadMode::kFull;
  bool skip = false;

  std::size_t scalar_count() const { return count_params(tensors, TagFilter::all()); }
};

}  // namespace fedadapt
