#pragma once

#include <vector>

namespace fedadapt {

// One scored (user, item) pair as the model sees it. `groups` holds the
// user's group index for each grouping attribute of the architecture, in
// architecture order. `label` is 0/1 for real data and may be a soft target
// in [0, 1] during distillation.
struct Example {
  std::vector<int> user_attrs;
  std::vector<int> item_attrs;
  std::vector<int> groups;
  double label = 0.0;
};

}  // namespace fedadapt
