#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

// Partition role of a tensor during federated optimization.
enum class Tag { kFrozen, kPrivate, kShared };

const char* tag_name(Tag tag);
Tag parse_tag(std::string_view name);

// Bit mask over Tag values for count_params and friends.
struct TagFilter {
  bool frozen = false;
  bool private_ = false;
  bool shared = false;

  static constexpr TagFilter all() { return {true, true, true}; }
  static constexpr TagFilter trainable() { return {false, true, true}; }
  static constexpr TagFilter only(Tag t) {
    return {t == Tag::kFrozen, t == Tag::kPrivate, t == Tag::kShared};
  }
  bool matches(Tag t) const {
    return t == Tag::kFrozen ? frozen : t == Tag::kPrivate ? private_ : shared;
  }
};

struct ParamEntry {
  Tensor value;
  Tag tag = Tag::kShared;
};

// Named tensors of one model instance, ordered by name so every traversal
// (init, serialization, aggregation) is deterministic.
class ParamSet {
 public:
  using Map = std::map<std::string, ParamEntry, std::less<>>;

  void add(std::string name, Tensor value, Tag tag);
  // Insert or overwrite.
  void put(std::string name, Tensor value, Tag tag);
  void erase(std::string_view name);

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  const Tensor& get(std::string_view name) const;
  Tensor& get_mutable(std::string_view name);
  const Tensor* find(std::string_view name) const;
  Tag tag(std::string_view name) const;
  void set_tag(std::string_view name, Tag tag);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  ParamSet filtered(TagFilter filter) const;
  bool all_finite() const;

 private:
  Map entries_;
};

using GradientSet = std::map<std::string, Tensor, std::less<>>;

std::size_t count_params(const ParamSet& params, TagFilter filter);

bool bit_identical(const ParamSet& a, const ParamSet& b);

// theta <- theta - lr * g for each tensor present in `grads`.
void sgd_step(ParamSet& params, const GradientSet& grads, double lr);

// Text format, one block per tensor:
//   tensor <name> <tag> <rows> <cols>
//   <row values as hexadecimal floating point>
// Hex floats make the round trip bit-exact.
void write_params(std::ostream& out, const ParamSet& params);
ParamSet read_params(std::istream& in, std::string_view origin = "<stream>");
void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

}  // namespace fedadapt
