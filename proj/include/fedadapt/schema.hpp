#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedadapt {

struct Attribute {
  std::string name;
  int cardinality = 1;

  bool operator==(const Attribute&) const = default;
};

// Ordered list of categorical attributes on one side (users or items).
// Names must be unique identifiers ([A-Za-z0-9_]+) because they become part
// of tensor names.
class AttributeSchema {
 public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<Attribute> attributes);

  std::size_t size() const { return attributes_.size(); }
  bool empty() const { return attributes_.empty(); }
  const Attribute& operator[](std::size_t i) const { return attributes_[i]; }
  auto begin() const { return attributes_.begin(); }
  auto end() const { return attributes_.end(); }

  std::optional<std::size_t> index_of(std::string_view name) const;

  // Throws ValidationError naming the first offending attribute.
  void check_values(std::span<const int> values, std::string_view side) const;

  bool operator==(const AttributeSchema&) const = default;

 private:
  std::vector<Attribute> attributes_;
};

bool is_identifier(std::string_view name);

}  // namespace fedadapt
