#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fedadapt/data.hpp"
#include "fedadapt/errors.hpp"
#include "test_util.hpp"

using namespace fedadapt;

namespace {

Dataset tiny(std::vector<Interaction> log) {
  std::vector<EntityRecord> users{{1, {0, 1}}, {2, {1, 0}}, {3, {1, 1}}};
  std::vector<EntityRecord> items;
  for (int v = 0; v < 12; ++v) items.push_back({v, {v % 3}});
  return Dataset(AttributeSchema({{"age", 2}, {"region", 2}}), AttributeSchema({{"cat", 3}}),
                 users, items, std::move(log));
}

std::vector<Interaction> user_log(int user, int n, std::int64_t t0 = 0) {
  std::vector<Interaction> out;
  for (int k = 0; k < n; ++k) out.push_back({user, k, t0 + 10 * k, 1, Split::kUnassigned});
  return out;
}

}  // namespace

TEST(Schema, RejectsBadAttributes) {
  EXPECT_THROW(AttributeSchema({{"a", 0}}), ValidationError);
  EXPECT_THROW(AttributeSchema({{"a", 2}, {"a", 3}}), ValidationError);
  EXPECT_THROW(AttributeSchema({{"a-b", 2}}), ValidationError);
  EXPECT_NO_THROW(AttributeSchema({{"a", 1}, {"b", 5}}));
}

TEST(Dataset, ValidatesValuesAndReferences) {
  EXPECT_THROW(Dataset(AttributeSchema({{"a", 2}}), AttributeSchema({{"c", 2}}), {{1, {2}}},
                       {{1, {0}}}, {}),
               ValidationError);
  EXPECT_THROW(Dataset(AttributeSchema({{"a", 2}}), AttributeSchema({{"c", 2}}), {{1, {1}}},
                       {{1, {0}}}, {{1, 9, 0, 1, Split::kUnassigned}}),
               ValidationError);
  EXPECT_THROW(Dataset(AttributeSchema({{"a", 2}}), AttributeSchema({{"c", 2}}), {{1, {1}}},
                       {{1, {0}}}, {{1, 1, 0, 2, Split::kUnassigned}}),
               ValidationError);
}

TEST(Csv, LoadsThreeLineFixture) {
  test_util::TempDir dir;
  test_util::write(dir / "users.csv", "user_id,age,region\n10,0,1\n11,1,0\n");
  test_util::write(dir / "items.csv", "item_id,cat\n7,2\n");
  test_util::write(dir / "interactions.csv",
                   "user_id,item_id,timestamp,label\n10,7,5,1\n11,7,6,1\n10,7,9,1\n");
  const Dataset d = load_dataset(dir / "users.csv", dir / "items.csv", dir / "interactions.csv");
  EXPECT_EQ(d.interactions().size(), 3u);
  EXPECT_EQ(d.users().size(), 2u);
  EXPECT_EQ(d.user_schema()[1].cardinality, 2);  // max value + 1
  EXPECT_EQ(d.item_schema()[0].cardinality, 3);
  for (const auto& x : d.interactions()) EXPECT_EQ(x.split, Split::kUnassigned);
  EXPECT_FALSE(d.has_native_negatives());
}

TEST(Csv, DeclaredCardinalityIsChecked) {
  test_util::TempDir dir;
  test_util::write(dir / "users.csv", "user_id,age:2\n1,0\n2,2\n");
  test_util::write(dir / "items.csv", "item_id,cat:4\n1,0\n");
  test_util::write(dir / "interactions.csv", "user_id,item_id,timestamp,label\n1,1,0,1\n");
  EXPECT_THROW(load_dataset(dir / "users.csv", dir / "items.csv", dir / "interactions.csv"),
               ValidationError);
}

TEST(Csv, MalformedRowReportsLine) {
  test_util::TempDir dir;
  test_util::write(dir / "users.csv", "user_id,age\n1,0\n");
  test_util::write(dir / "items.csv", "item_id,cat\n1,0\n");
  test_util::write(dir / "interactions.csv", "user_id,item_id,timestamp,label\n1,1,0,1\n1,x,3,1\n");
  try {
    load_dataset(dir / "users.csv", dir / "items.csv", dir / "interactions.csv");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  test_util::write(dir / "interactions.csv", "user_id,item_id,timestamp,label\n1,1,0\n");
  EXPECT_THROW(load_dataset(dir / "users.csv", dir / "items.csv", dir / "interactions.csv"),
               ParseError);
}

TEST(Csv, SaveLoadRoundTrip) {
  SynthConfig c;
  c.n_users = 20;
  c.n_items = 15;
  c.interactions_per_user = 6;
  c.seed = 4;
  const Dataset d = synth_generate(c);
  test_util::TempDir dir;
  save_dataset(d, dir.path());
  const Dataset back = load_dataset(dir / "users.csv", dir / "items.csv", dir / "interactions.csv");
  EXPECT_EQ(back.user_schema(), d.user_schema());
  EXPECT_EQ(back.item_schema(), d.item_schema());
  ASSERT_EQ(back.interactions().size(), d.interactions().size());
  for (std::size_t i = 0; i < d.interactions().size(); ++i) {
    EXPECT_EQ(back.interactions()[i].user, d.interactions()[i].user);
    EXPECT_EQ(back.interactions()[i].item, d.interactions()[i].item);
    EXPECT_EQ(back.interactions()[i].timestamp, d.interactions()[i].timestamp);
    EXPECT_EQ(back.interactions()[i].label, d.interactions()[i].label);
  }
}

TEST(ChronoSplit, SizesTable) {
  // train = ceil(0.6 n); val = ceil(0.2 n) unless that would empty the test set.
  const std::map<int, std::array<int, 3>> expected{
      {5, {3, 1, 1}},  {6, {4, 1, 1}},  {7, {5, 1, 1}},   {8, {5, 2, 1}},
      {10, {6, 2, 2}}, {11, {7, 3, 1}}, {50, {30, 10, 10}}, {101, {61, 21, 19}}};
  for (const auto& [n, e] : expected) {
    const auto s = chronological_split_sizes(n);
    EXPECT_EQ(s.train, e[0]) << n;
    EXPECT_EQ(s.val, e[1]) << n;
    EXPECT_EQ(s.test, e[2]) << n;
  }
  for (int n = 5; n <= 300; ++n) {
    const auto s = chronological_split_sizes(n);
    EXPECT_EQ(s.train + s.val + s.test, n);
    EXPECT_GE(s.val, 1);
    EXPECT_GE(s.test, 1);
  }
}

TEST(ChronoSplit, OrdersByTimeAndDropsSmallUsers) {
  auto log = user_log(1, 10);
  auto small = user_log(2, 4);
  log.insert(log.end(), small.begin(), small.end());
  std::reverse(log.begin(), log.end());
  ChronoSplitReport report;
  const Dataset d = split_per_user_chronological(tiny(log), &report);
  EXPECT_EQ(report.dropped_users, std::vector<int>{2});
  std::map<Split, std::vector<std::int64_t>> by;
  for (const auto& x : d.interactions()) {
    EXPECT_EQ(x.user, 1);
    by[x.split].push_back(x.timestamp);
  }
  EXPECT_EQ(by[Split::kFedTrain].size(), 6u);
  EXPECT_EQ(by[Split::kFedVal].size(), 2u);
  EXPECT_EQ(by[Split::kFedTest].size(), 2u);
  EXPECT_LE(*std::max_element(by[Split::kFedTrain].begin(), by[Split::kFedTrain].end()),
            *std::min_element(by[Split::kFedVal].begin(), by[Split::kFedVal].end()));
  EXPECT_LE(*std::max_element(by[Split::kFedVal].begin(), by[Split::kFedVal].end()),
            *std::min_element(by[Split::kFedTest].begin(), by[Split::kFedTest].end()));
}

TEST(ChronoSplit, TiesBrokenByItemId) {
  std::vector<Interaction> log;
  for (int v : {9, 3, 7, 1, 5}) log.push_back({1, v, 100, 1, Split::kUnassigned});
  const Dataset d = split_per_user_chronological(tiny(log));
  std::map<int, Split> split_of;
  for (const auto& x : d.interactions()) split_of[x.item] = x.split;
  EXPECT_EQ(split_of[1], Split::kFedTrain);
  EXPECT_EQ(split_of[3], Split::kFedTrain);
  EXPECT_EQ(split_of[5], Split::kFedTrain);
  EXPECT_EQ(split_of[7], Split::kFedVal);
  EXPECT_EQ(split_of[9], Split::kFedTest);
}

TEST(PretrainSplit, DisjointUsersAndDeterministic) {
  SynthConfig c;
  c.n_users = 50;
  c.n_items = 30;
  c.interactions_per_user = 8;
  const Dataset raw = synth_generate(c);
  const Dataset a = split_pretrain_federated(raw, 0.3, 7);
  const Dataset b = split_pretrain_federated(raw, 0.3, 7);
  std::set<int> pre, fed;
  for (std::size_t i = 0; i < a.interactions().size(); ++i) {
    const auto& x = a.interactions()[i];
    EXPECT_EQ(x.split, b.interactions()[i].split);
    (x.split == Split::kPretrain ? pre : fed).insert(x.user);
  }
  EXPECT_EQ(pre.size(), 15u);
  EXPECT_EQ(fed.size(), 35u);
  for (int u : pre) EXPECT_FALSE(fed.contains(u));
  EXPECT_THROW(split_pretrain_federated(raw, 1.0, 7), ValidationError);
  EXPECT_THROW(split_pretrain_federated(raw, 0.0, 7), ValidationError);
}

TEST(PretrainSplit, EverySplitTagIsAssigned) {
  SynthConfig c;
  c.n_users = 40;
  c.interactions_per_user = 12;
  const Dataset d = split_per_user_chronological(split_pretrain_federated(synth_generate(c), 0.5, 1));
  for (const auto& x : d.interactions()) EXPECT_NE(x.split, Split::kUnassigned);
  EXPECT_NO_THROW(d.validate());
}

TEST(Groups, GroupIsAttributeValue) {
  const Dataset d = tiny({});
  const std::vector<std::string> attrs{"region", "age"};
  const auto g = assign_groups(d, attrs);
  EXPECT_EQ(g.total(), 2u);
  EXPECT_EQ(g.groups_of(1), (std::vector<int>{1, 0}));
  EXPECT_EQ(g.groups_of(2), (std::vector<int>{0, 1}));
  EXPECT_EQ(g.cardinalities, (std::vector<int>{2, 2}));
  const std::vector<std::string> bad{"nope"};
  EXPECT_THROW(assign_groups(d, bad), ValidationError);
}

TEST(Negatives, RatioAndExclusion) {
  const auto pos = user_log(1, 3);  // items 0, 1, 2
  std::vector<int> universe(12);
  std::iota(universe.begin(), universe.end(), 0);
  Rng rng(3);
  NegativeSampleReport report;
  const auto out = sample_negatives(pos, universe, 4, rng, nullptr, &report);
  ASSERT_EQ(out.size(), 15u);
  EXPECT_FALSE(report.with_replacement);
  for (std::size_t i = 0; i < out.size(); i += 5) {
    EXPECT_EQ(out[i].label, 1);
    std::set<int> seen;
    for (std::size_t k = 1; k <= 4; ++k) {
      EXPECT_EQ(out[i + k].label, 0);
      EXPECT_GE(out[i + k].item, 3);
      seen.insert(out[i + k].item);
    }
    EXPECT_EQ(seen.size(), 4u);  // without replacement per positive
  }
  Rng again(3);
  const auto twice = sample_negatives(pos, universe, 4, again);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].item, twice[i].item);
}

TEST(Negatives, FallsBackToReplacement) {
  const auto pos = user_log(1, 10);
  std::vector<int> universe(12);
  std::iota(universe.begin(), universe.end(), 0);
  Rng rng(1);
  NegativeSampleReport report;
  const auto out = sample_negatives(pos, universe, 4, rng, nullptr, &report);
  EXPECT_TRUE(report.with_replacement);
  EXPECT_EQ(out.size(), 50u);
  for (const auto& p : out) {
    if (p.label == 0) EXPECT_GE(p.item, 10);
  }
  std::vector<int> none(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) none[i] = pos[i].item;
  EXPECT_THROW(sample_negatives(pos, none, 1, rng), ValidationError);
}

TEST(Synth, DeterministicAndSized) {
  SynthConfig c;
  c.n_users = 30;
  c.n_items = 40;
  c.interactions_per_user = 10;
  c.seed = 5;
  const Dataset a = synth_generate(c);
  const Dataset b = synth_generate(c);
  ASSERT_EQ(a.interactions().size(), 300u);
  EXPECT_EQ(a.users().size(), 30u);
  EXPECT_EQ(a.items().size(), 40u);
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_EQ(a.interactions()[i].item, b.interactions()[i].item);
    EXPECT_EQ(a.interactions()[i].label, b.interactions()[i].label);
  }
  c.beta = 0.0;
  const Dataset z = synth_generate(c);
  bool differs = false;
  for (std::size_t i = 0; i < 300; ++i) differs |= a.interactions()[i].label != z.interactions()[i].label;
  EXPECT_TRUE(differs);
  SynthConfig bad;
  bad.n_users = 0;
  EXPECT_THROW(synth_generate(bad), ValidationError);
}

namespace {

// Pearson chi-square of a rows x 2 table of (positives, negatives).
double chi_square(const std::vector<std::array<double, 2>>& t) {
  double total = 0.0, col[2] = {0, 0};
  std::vector<double> row(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    row[i] = t[i][0] + t[i][1];
    col[0] += t[i][0];
    col[1] += t[i][1];
    total += row[i];
  }
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int j = 0; j < 2; ++j) {
      const double e = row[i] * col[j] / total;
      if (e > 0) s += (t[i][j] - e) * (t[i][j] - e) / e;
    }
  }
  return s;
}

std::vector<std::array<double, 2>> label_table(const Dataset& d, bool by_cell) {
  const int categories = d.item_schema()[1].cardinality;
  const int groups = d.user_schema()[0].cardinality;
  std::vector<std::array<double, 2>> t(by_cell ? groups * categories : groups, {0, 0});
  for (const auto& x : d.interactions()) {
    const int g = d.user(x.user).attrs[0];
    const int c = d.item(x.item).attrs[1];
    t[by_cell ? g * categories + c : g][x.label == 1 ? 0 : 1] += 1;
  }
  return t;
}

}  // namespace

TEST(Synth, GroupDependenceFollowsBeta) {
  // Without per-user and per-item noise labels are iid given (group, category),
  // so the chi-square reference distribution applies.
  SynthConfig c;
  c.n_users = 2000;
  c.n_items = 100;
  c.interactions_per_user = 20;
  c.user_noise = 0.0;
  c.popularity_scale = 0.0;
  c.seed = 21;
  c.beta = 0.0;
  const Dataset flat = synth_generate(c);
  // df = 2; the 0.999 quantile is 13.82
  EXPECT_LT(chi_square(label_table(flat, false)), 13.82);
  c.beta = 1.0;
  const Dataset dep = synth_generate(c);
  // df = 23; the 0.999 quantile is 49.73
  EXPECT_GT(chi_square(label_table(dep, true)), 49.73);
}

TEST(Synth, Beta1BenchmarkShowsDependence) {
  SynthConfig c;  // the benchmark generator: 200 users, 100 items, beta 1
  c.seed = 3;
  const Dataset d = synth_generate(c);
  EXPECT_GT(chi_square(label_table(d, true)), 49.73);
}
