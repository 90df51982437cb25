#include <charconv>
#include <fstream>
#include <sstream>

#include "fedadapt/data.hpp"
#include "fedadapt/errors.hpp"

namespace fedadapt {
namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(std::move(cell));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Table t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw ParseError(path.string() + ":1: missing header");
  return t;
}

template <typename T>
T parse_number(const std::string& cell, const std::filesystem::path& path, int line_no) {
  T value{};
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not an integer: '" +
                     cell + "'");
  }
  return value;
}

struct EntityTable {
  AttributeSchema schema;
  std::vector<EntityRecord> records;
};

EntityTable read_entities(const std::filesystem::path& path, std::string_view id_column) {
  const Table t = read_table(path);
  if (t.header[0] != id_column) {
    throw ParseError(path.string() + ":1: first column must be '" + std::string(id_column) + "'");
  }
  std::vector<std::string> names;
  std::vector<int> declared;
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    const auto& cell = t.header[c];
    const auto colon = cell.find(':');
    names.push_back(cell.substr(0, colon));
    declared.push_back(colon == std::string::npos
                           ? -1
                           : parse_number<int>(cell.substr(colon + 1), path, 1));
  }
  EntityTable out;
  std::vector<int> max_value(names.size(), -1);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    EntityRecord rec;
    rec.id = parse_number<int>(t.rows[r][0], path, t.line_numbers[r]);
    for (std::size_t c = 1; c < t.header.size(); ++c) {
      const int v = parse_number<int>(t.rows[r][c], path, t.line_numbers[r]);
      rec.attrs.push_back(v);
      max_value[c - 1] = std::max(max_value[c - 1], v);
    }
    out.records.push_back(std::move(rec));
  }
  std::vector<Attribute> attrs;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const int card = declared[i] >= 0 ? declared[i] : std::max(1, max_value[i] + 1);
    attrs.push_back({names[i], card});
  }
  out.schema = AttributeSchema(std::move(attrs));
  return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& users_path,
                     const std::filesystem::path& items_path,
                     const std::filesystem::path& interactions_path) {
  EntityTable users = read_entities(users_path, "user_id");
  EntityTable items = read_entities(items_path, "item_id");

  const Table t = read_table(interactions_path);
  const std::vector<std::string> expected{"user_id", "item_id", "timestamp", "label"};
  if (t.header != expected) {
    throw ParseError(interactions_path.string() + ":1: header must be user_id,item_id,timestamp,label");
  }
  std::vector<Interaction> log;
  log.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int line = t.line_numbers[r];
    Interaction x;
    x.user = parse_number<int>(t.rows[r][0], interactions_path, line);
    x.item = parse_number<int>(t.rows[r][1], interactions_path, line);
    x.timestamp = parse_number<std::int64_t>(t.rows[r][2], interactions_path, line);
    x.label = parse_number<int>(t.rows[r][3], interactions_path, line);
    log.push_back(x);
  }
  return Dataset(std::move(users.schema), std::move(items.schema), std::move(users.records),
                 std::move(items.records), std::move(log));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    return out;
  };
  auto write_entities = [](std::ofstream& out, std::string_view id_col, const AttributeSchema& schema,
                           const std::vector<EntityRecord>& records) {
    out << id_col;
    for (const auto& a : schema) out << ',' << a.name << ':' << a.cardinality;
    out << '\n';
    for (const auto& r : records) {
      out << r.id;
      for (int v : r.attrs) out << ',' << v;
      out << '\n';
    }
  };
  {
    auto out = open("users.csv");
    write_entities(out, "user_id", dataset.user_schema(), dataset.users());
  }
  {
    auto out = open("items.csv");
    write_entities(out, "item_id", dataset.item_schema(), dataset.items());
  }
  auto out = open("interactions.csv");
  out << "user_id,item_id,timestamp,label\n";
  for (const auto& x : dataset.interactions()) {
    out << x.user << ',' << x.item << ',' << x.timestamp << ',' << x.label << '\n';
  }
  if (!out) throw IoError("failed writing " + (dir / "interactions.csv").string());
}

}  // namespace fedadapt
