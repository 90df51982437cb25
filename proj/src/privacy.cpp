#include "fedadapt/privacy.hpp"

#include <cmath>

#include "fedadapt/errors.hpp"

namespace fedadapt {

double laplace_sample(double scale, Rng& rng) {
  if (scale < 0.0 || !std::isfinite(scale)) throw ValidationError("Laplace scale must be >= 0");
  if (scale == 0.0) return 0.0;
  double u = rng.uniform() - 0.5;
  while (u == -0.5) u = rng.uniform() - 0.5;  // ln(0)
  const double sign = u < 0.0 ? -1.0 : 1.0;
  return -scale * sign * std::log(1.0 - 2.0 * std::abs(u));
}

void noise_upload(Upload& upload, const NoiseConfig& config, Rng& rng) {
  for (const auto& [name, entry] : upload.tensors) {
    if (entry.tag != Tag::kShared) {
      throw ValidationError("upload contains non-shared tensor '" + name + "'");
    }
  }
  if (!config.enabled || config.intensity == 0.0) return;
  if (config.intensity < 0.0) throw ValidationError("noise intensity must be >= 0");
  std::vector<std::string> names;
  for (const auto& [name, entry] : upload.tensors) names.push_back(name);
  for (const auto& name : names) {
    for (auto& v : upload.tensors.get_mutable(name).data()) {
      v += laplace_sample(config.intensity, rng);
    }
  }
}

}  // namespace fedadapt
