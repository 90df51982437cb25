#include <cmath>
#include <numeric>

#include "fedadapt/data.hpp"
#include "fedadapt/errors.hpp"

namespace fedadapt {

Dataset synth_generate(const SynthConfig& config) {
  if (config.n_users <= 0 || config.n_items <= 0) {
    throw ValidationError("synthetic dataset needs at least one user and one item");
  }
  if (config.user_attrs.empty() || config.item_attrs.empty()) {
    throw ValidationError("synthetic dataset needs at least one user and one item attribute");
  }
  if (config.beta < 0.0 || config.beta > 1.0) {
    throw ValidationError("beta must lie in [0, 1]");
  }
  if (config.interactions_per_user < 0 || config.interactions_per_user > config.n_items) {
    throw ValidationError("interactions_per_user must lie in [0, n_items]");
  }
  Rng rng = Rng::stream(config.seed, streams::kSynth, 0);

  std::vector<Attribute> user_attrs;
  for (std::size_t i = 0; i < config.user_attrs.size(); ++i) {
    user_attrs.push_back({"u" + std::to_string(i), config.user_attrs[i]});
  }
  std::vector<Attribute> item_attrs;
  if (config.item_id_attr) item_attrs.push_back({"item_id", config.n_items});
  for (std::size_t i = 0; i < config.item_attrs.size(); ++i) {
    item_attrs.push_back({"i" + std::to_string(i), config.item_attrs[i]});
  }
  const std::size_t category_col = config.item_id_attr ? 1 : 0;
  const int n_groups = config.user_attrs[0];
  const int n_categories = config.item_attrs[0];

  std::vector<EntityRecord> users(config.n_users);
  for (int u = 0; u < config.n_users; ++u) {
    users[u].id = u;
    for (int card : config.user_attrs) users[u].attrs.push_back(static_cast<int>(rng.below(card)));
  }
  std::vector<EntityRecord> items(config.n_items);
  std::vector<double> popularity(config.n_items);
  for (int v = 0; v < config.n_items; ++v) {
    items[v].id = v;
    if (config.item_id_attr) items[v].attrs.push_back(v);
    for (int card : config.item_attrs) items[v].attrs.push_back(static_cast<int>(rng.below(card)));
    popularity[v] = rng.normal(0.0, config.popularity_scale);
  }
  std::vector<double> affinity(static_cast<std::size_t>(n_groups * n_categories));
  for (auto& a : affinity) a = rng.normal(0.0, config.affinity_scale);

  std::vector<Interaction> log;
  log.reserve(static_cast<std::size_t>(config.n_users) * config.interactions_per_user);
  std::vector<int> pool(config.n_items);
  std::vector<double> pref(n_categories);
  for (int u = 0; u < config.n_users; ++u) {
    const int group = users[u].attrs[0];
    for (auto& p : pref) p = rng.normal(0.0, config.user_noise);
    std::iota(pool.begin(), pool.end(), 0);
    std::int64_t t = static_cast<std::int64_t>(rng.below(1000));
    for (int k = 0; k < config.interactions_per_user; ++k) {
      const std::size_t j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      const int v = pool[k];
      const int category = items[v].attrs[category_col];
      const double logit = config.base_logit + popularity[v] +
                           config.beta * affinity[group * n_categories + category] +
                           pref[category];
      const double p = 1.0 / (1.0 + std::exp(-logit));
      t += 1 + static_cast<std::int64_t>(rng.below(100));
      log.push_back({u, v, t, rng.bernoulli(p) ? 1 : 0, Split::kUnassigned});
    }
  }
  return Dataset(AttributeSchema(std::move(user_attrs)), AttributeSchema(std::move(item_attrs)),
                 std::move(users), std::move(items), std::move(log));
}

}  // namespace fedadapt
