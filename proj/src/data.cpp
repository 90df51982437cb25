#include "fedadapt/data.hpp"

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <numeric>

#include "fedadapt/errors.hpp"

namespace fedadapt {

bool is_identifier(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_';
  });
}

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes)
    : attributes_(std::move(attributes)) {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    const auto& a = attributes_[i];
    if (!is_identifier(a.name)) {
      throw ValidationError("attribute name '" + a.name + "' is not an identifier");
    }
    if (a.cardinality < 1) {
      throw ValidationError("attribute '" + a.name + "' has cardinality < 1");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (attributes_[j].name == a.name) {
        throw ValidationError("duplicate attribute name '" + a.name + "'");
      }
    }
  }
}

std::optional<std::size_t> AttributeSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name == name) return i;
  }
  return std::nullopt;
}

void AttributeSchema::check_values(std::span<const int> values, std::string_view side) const {
  if (values.size() != attributes_.size()) {
    throw ValidationError(std::string(side) + ": expected " + std::to_string(attributes_.size()) +
                          " attribute values, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0 || values[i] >= attributes_[i].cardinality) {
      throw ValidationError(std::string(side) + ": attribute '" + attributes_[i].name +
                            "' value " + std::to_string(values[i]) + " outside [0, " +
                            std::to_string(attributes_[i].cardinality) + ")");
    }
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kUnassigned: return "unassigned";
    case Split::kPretrain: return "pretrain";
    case Split::kFedTrain: return "fed-train";
    case Split::kFedVal: return "fed-val";
    case Split::kFedTest: return "fed-test";
  }
  return "?";
}

Dataset::Dataset(AttributeSchema user_schema, AttributeSchema item_schema,
                 std::vector<EntityRecord> users, std::vector<EntityRecord> items,
                 std::vector<Interaction> interactions)
    : user_schema_(std::move(user_schema)),
      item_schema_(std::move(item_schema)),
      users_(std::move(users)),
      items_(std::move(items)),
      interactions_(std::move(interactions)) {
  build_index();
  validate();
}

void Dataset::build_index() {
  user_index_.clear();
  item_index_.clear();
  for (std::size_t i = 0; i < users_.size(); ++i) {
    if (!user_index_.emplace(users_[i].id, i).second) {
      throw ValidationError("duplicate user id " + std::to_string(users_[i].id));
    }
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!item_index_.emplace(items_[i].id, i).second) {
      throw ValidationError("duplicate item id " + std::to_string(items_[i].id));
    }
  }
}

const EntityRecord& Dataset::user(int id) const {
  const auto it = user_index_.find(id);
  if (it == user_index_.end()) throw ValidationError("unknown user id " + std::to_string(id));
  return users_[it->second];
}

const EntityRecord& Dataset::item(int id) const {
  const auto it = item_index_.find(id);
  if (it == item_index_.end()) throw ValidationError("unknown item id " + std::to_string(id));
  return items_[it->second];
}

bool Dataset::has_native_negatives() const {
  return std::any_of(interactions_.begin(), interactions_.end(),
                     [](const Interaction& x) { return x.label == 0; });
}

std::vector<int> Dataset::item_ids() const {
  std::vector<int> ids;
  ids.reserve(items_.size());
  for (const auto& it : items_) ids.push_back(it.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Dataset::validate() const {
  for (const auto& u : users_) {
    user_schema_.check_values(u.attrs, "user " + std::to_string(u.id));
  }
  for (const auto& v : items_) {
    item_schema_.check_values(v.attrs, "item " + std::to_string(v.id));
  }
  for (const auto& x : interactions_) {
    if (!has_user(x.user)) throw ValidationError("interaction references unknown user id " + std::to_string(x.user));
    if (!has_item(x.item)) throw ValidationError("interaction references unknown item id " + std::to_string(x.item));
    if (x.label != 0 && x.label != 1) {
      throw ValidationError("interaction label must be 0 or 1, got " + std::to_string(x.label));
    }
  }
  // Per user: [min, max] timestamp of fed-train, fed-val, fed-test.
  std::unordered_map<int, std::array<std::int64_t, 6>> ranges;
  constexpr std::int64_t kMin = INT64_MIN, kMax = INT64_MAX;
  for (const auto& x : interactions_) {
    if (x.split != Split::kFedTrain && x.split != Split::kFedVal && x.split != Split::kFedTest) continue;
    auto [it, fresh] = ranges.try_emplace(x.user, std::array<std::int64_t, 6>{kMax, kMin, kMax, kMin, kMax, kMin});
    const int k = x.split == Split::kFedTrain ? 0 : x.split == Split::kFedVal ? 2 : 4;
    it->second[k] = std::min(it->second[k], x.timestamp);
    it->second[k + 1] = std::max(it->second[k + 1], x.timestamp);
  }
  for (const auto& [user, r] : ranges) {
    const bool ok = r[1] <= std::min(r[2], r[4]) && r[3] <= r[4];
    if (!ok) {
      throw ValidationError("user " + std::to_string(user) + ": federated splits are not chronological");
    }
  }
}

Dataset split_pretrain_federated(const Dataset& dataset, double pretrain_fraction,
                                 std::uint64_t seed) {
  if (!(pretrain_fraction > 0.0 && pretrain_fraction < 1.0)) {
    throw ValidationError("pretrain fraction must lie in (0, 1), got " +
                          std::to_string(pretrain_fraction));
  }
  std::vector<int> ids;
  for (const auto& u : dataset.users()) ids.push_back(u.id);
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng::stream(seed, streams::kPretrainSplit, 0);
  rng.shuffle(std::span<int>(ids));
  const auto n = static_cast<long>(ids.size());
  long n_pre = std::lround(pretrain_fraction * static_cast<double>(n));
  if (n >= 2) n_pre = std::clamp(n_pre, 1L, n - 1);
  const std::set<int> pretrain_users(ids.begin(), ids.begin() + n_pre);

  Dataset out = dataset;
  for (auto& x : out.mutable_interactions()) {
    x.split = pretrain_users.contains(x.user) ? Split::kPretrain : Split::kUnassigned;
  }
  return out;
}

SplitSizes chronological_split_sizes(int n) {
  SplitSizes s;
  if (n < kMinFederatedInteractions) return s;
  s.train = (6 * n + 9) / 10;                    // ceil(0.6 n)
  s.val = std::min((2 * n + 9) / 10, n - s.train - 1);  // ceil(0.2 n), test keeps >= 1
  s.test = n - s.train - s.val;
  return s;
}

Dataset split_per_user_chronological(const Dataset& dataset, ChronoSplitReport* report) {
  std::map<int, std::vector<std::size_t>> per_user;
  const auto& all = dataset.interactions();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].split == Split::kUnassigned) per_user[all[i].user].push_back(i);
  }
  std::vector<Interaction> kept;
  kept.reserve(all.size());
  std::vector<Split> tag(all.size(), Split::kUnassigned);
  std::vector<bool> drop(all.size(), false);
  ChronoSplitReport local;
  for (auto& [user, idx] : per_user) {
    const int n = static_cast<int>(idx.size());
    if (n < kMinFederatedInteractions) {
      local.dropped_users.push_back(user);
      for (auto i : idx) drop[i] = true;
      continue;
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (all[a].timestamp != all[b].timestamp) return all[a].timestamp < all[b].timestamp;
      return all[a].item < all[b].item;
    });
    const SplitSizes sizes = chronological_split_sizes(n);
    for (int k = 0; k < n; ++k) {
      tag[idx[k]] = k < sizes.train ? Split::kFedTrain
                    : k < sizes.train + sizes.val ? Split::kFedVal
                                                  : Split::kFedTest;
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (drop[i]) continue;
    Interaction x = all[i];
    if (x.split == Split::kUnassigned) x.split = tag[i];
    kept.push_back(x);
  }
  if (report) *report = local;
  Dataset out(dataset.user_schema(), dataset.item_schema(), dataset.users(), dataset.items(),
              std::move(kept));
  return out;
}

std::vector<int> GroupAssignment::groups_of(int user_id) const {
  std::vector<int> out;
  out.reserve(group_of.size());
  for (const auto& m : group_of) {
    const auto it = m.find(user_id);
    if (it == m.end()) throw ValidationError("user " + std::to_string(user_id) + " has no group");
    out.push_back(it->second);
  }
  return out;
}

GroupAssignment assign_groups(const Dataset& dataset,
                              std::span<const std::string> grouping_attributes) {
  GroupAssignment out;
  for (const auto& name : grouping_attributes) {
    const auto idx = dataset.user_schema().index_of(name);
    if (!idx) throw ValidationError("unknown grouping attribute '" + name + "'");
    out.attributes.push_back(name);
    out.cardinalities.push_back(dataset.user_schema()[*idx].cardinality);
    std::map<int, int> m;
    for (const auto& u : dataset.users()) m.emplace(u.id, u.attrs[*idx]);
    out.group_of.push_back(std::move(m));
  }
  return out;
}

std::vector<LabeledPair> sample_negatives(std::span<const Interaction> positives,
                                          std::span<const int> item_universe, int ratio,
                                          Rng& rng, const std::set<int>* interacted,
                                          NegativeSampleReport* report) {
  if (ratio < 0) throw ValidationError("negative sampling ratio must be >= 0");
  std::set<int> own;
  if (!interacted) {
    for (const auto& p : positives) own.insert(p.item);
    interacted = &own;
  }
  std::vector<int> candidates;
  for (int v : item_universe) {
    if (!interacted->contains(v)) candidates.push_back(v);
  }
  const auto per = static_cast<std::size_t>(ratio);
  const bool replace = candidates.size() < per;
  if (ratio > 0 && !positives.empty() && candidates.empty()) {
    throw ValidationError("no non-interacted items available for negative sampling");
  }
  if (report) report->with_replacement = replace && ratio > 0 && !positives.empty();

  std::vector<LabeledPair> out;
  out.reserve(positives.size() * (1 + per));
  std::vector<int> pool;
  for (const auto& p : positives) {
    out.push_back({p.user, p.item, 1});
    if (per == 0) continue;
    if (replace) {
      for (std::size_t k = 0; k < per; ++k) {
        out.push_back({p.user, candidates[rng.below(candidates.size())], 0});
      }
      continue;
    }
    // Partial Fisher-Yates over a fresh copy: `per` distinct draws.
    pool = candidates;
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      out.push_back({p.user, pool[k], 0});
    }
  }
  return out;
}

Example make_example(const Dataset& dataset, const GroupAssignment& groups, int user, int item,
                     int label) {
  Example e;
  e.user_attrs = dataset.user(user).attrs;
  e.item_attrs = dataset.item(item).attrs;
  if (groups.total() > 0) e.groups = groups.groups_of(user);
  e.label = static_cast<double>(label);
  return e;
}

}  // namespace fedadapt
