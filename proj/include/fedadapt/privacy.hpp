#pragma once

#include "fedadapt/rng.hpp"
#include "fedadapt/upload.hpp"

namespace fedadapt {

// Client-side Laplace noising of uploads. `intensity` is the Laplace scale b
// (variance 2 b^2). There is no clipping and no epsilon accounting.
struct NoiseConfig {
  bool enabled = false;
  double intensity = 0.0;
};

// Inverse CDF: u ~ U(-1/2, 1/2), x = -b sign(u) ln(1 - 2|u|).
double laplace_sample(double scale, Rng& rng);

// Adds an independent Laplace draw to every scalar of every tensor in the
// upload. Throws ValidationError if the upload carries a non-shared tensor.
void noise_upload(Upload& upload, const NoiseConfig& config, Rng& rng);

}  // namespace fedadapt
