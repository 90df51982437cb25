#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedadapt/example.hpp"
#include "fedadapt/rng.hpp"
#include "fedadapt/schema.hpp"

namespace fedadapt {

enum class Split { kUnassigned, kPretrain, kFedTrain, kFedVal, kFedTest };

const char* split_name(Split s);

struct EntityRecord {
  int id = 0;
  std::vector<int> attrs;
};

struct Interaction {
  int user = 0;
  int item = 0;
  std::int64_t timestamp = 0;
  int label = 1;
  Split split = Split::kUnassigned;
};

// Users, items, their categorical attributes and the interaction log.
// Record ids are arbitrary integers; lookups go through the index maps.
class Dataset {
 public:
  Dataset() = default;
  Dataset(AttributeSchema user_schema, AttributeSchema item_schema,
          std::vector<EntityRecord> users, std::vector<EntityRecord> items,
          std::vector<Interaction> interactions);

  const AttributeSchema& user_schema() const { return user_schema_; }
  const AttributeSchema& item_schema() const { return item_schema_; }
  const std::vector<EntityRecord>& users() const { return users_; }
  const std::vector<EntityRecord>& items() const { return items_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }
  std::vector<Interaction>& mutable_interactions() { return interactions_; }

  const EntityRecord& user(int id) const;
  const EntityRecord& item(int id) const;
  bool has_user(int id) const { return user_index_.contains(id); }
  bool has_item(int id) const { return item_index_.contains(id); }

  // True when the log carries explicit 0-labels (exposure data); negative
  // sampling is skipped in that case.
  bool has_native_negatives() const;

  std::vector<int> item_ids() const;

  // Throws ValidationError on any broken invariant.
  void validate() const;

 private:
  void build_index();

  AttributeSchema user_schema_;
  AttributeSchema item_schema_;
  std::vector<EntityRecord> users_;
  std::vector<EntityRecord> items_;
  std::vector<Interaction> interactions_;
  std::unordered_map<int, std::size_t> user_index_;
  std::unordered_map<int, std::size_t> item_index_;
};

// CSV ingestion. Attribute header cells may carry an explicit cardinality as
// `name:p`; without it the cardinality is max(value)+1.
Dataset load_dataset(const std::filesystem::path& users_path,
                     const std::filesystem::path& items_path,
                     const std::filesystem::path& interactions_path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Disjoint user partition: round(fraction * n) users go to the pretrain side.
Dataset split_pretrain_federated(const Dataset& dataset, double pretrain_fraction,
                                 std::uint64_t seed);

struct ChronoSplitReport {
  std::vector<int> dropped_users;
};

inline constexpr int kMinFederatedInteractions = 5;

// Per-user 6:2:2 chronological split of every unassigned interaction.
// Users with fewer than kMinFederatedInteractions are dropped (their
// interactions removed) and listed in the report.
Dataset split_per_user_chronological(const Dataset& dataset,
                                     ChronoSplitReport* report = nullptr);

struct SplitSizes {
  int train = 0;
  int val = 0;
  int test = 0;
};
SplitSizes chronological_split_sizes(int n);

// One map per grouping attribute; group index = the user's attribute value.
struct GroupAssignment {
  std::vector<std::string> attributes;
  std::vector<int> cardinalities;
  std::vector<std::map<int, int>> group_of;  // per attribute: user id -> group

  std::size_t total() const { return attributes.size(); }
  std::vector<int> groups_of(int user_id) const;
};

GroupAssignment assign_groups(const Dataset& dataset,
                              std::span<const std::string> grouping_attributes);

struct LabeledPair {
  int user = 0;
  int item = 0;
  int label = 0;
};

struct NegativeSampleReport {
  bool with_replacement = false;
};

// Each positive is followed by `ratio` negatives drawn without replacement
// from items the user never interacted with (`interacted`, which defaults to
// the items of `positives`).
std::vector<LabeledPair> sample_negatives(std::span<const Interaction> positives,
                                          std::span<const int> item_universe,
                                          int ratio, Rng& rng,
                                          const std::set<int>* interacted = nullptr,
                                          NegativeSampleReport* report = nullptr);

struct SynthConfig {
  int n_users = 200;
  int n_items = 100;
  std::vector<int> user_attrs{3, 4};
  std::vector<int> item_attrs{8};
  bool item_id_attr = true;
  double beta = 1.0;
  int interactions_per_user = 50;
  double base_logit = -0.3;
  double affinity_scale = 1.5;
  double popularity_scale = 0.5;
  double user_noise = 2.0;
  std::uint64_t seed = 0;
};

// Group-affinity latent model. Group = value of the first user attribute,
// category = value of the first configured item attribute. Each user sees
// `interactions_per_user` distinct items; label ~ Bernoulli(sigmoid(
// base + popularity(v) + beta * affinity(group, category) + pref(u, category))).
Dataset synth_generate(const SynthConfig& config);

// Model-ready examples of one interaction subset, with group indices filled
// from `groups` (empty assignment -> empty group vectors).
Example make_example(const Dataset& dataset, const GroupAssignment& groups,
                     int user, int item, int label);

}  // namespace fedadapt
