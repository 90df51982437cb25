#include "fedadapt/param_set.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "fedadapt/errors.hpp"

namespace fedadapt {

const char* tag_name(Tag tag) {
  switch (tag) {
    case Tag::kFrozen: return "frozen";
    case Tag::kPrivate: return "private";
    case Tag::kShared: return "shared";
  }
  return "?";
}

Tag parse_tag(std::string_view name) {
  if (name == "frozen") return Tag::kFrozen;
  if (name == "private") return Tag::kPrivate;
  if (name == "shared") return Tag::kShared;
  throw ParseError("unknown partition tag '" + std::string(name) + "'");
}

void ParamSet::add(std::string name, Tensor value, Tag tag) {
  if (contains(name)) throw ValidationError("duplicate tensor '" + name + "'");
  entries_.emplace(std::move(name), ParamEntry{std::move(value), tag});
}

void ParamSet::put(std::string name, Tensor value, Tag tag) {
  entries_.insert_or_assign(std::move(name), ParamEntry{std::move(value), tag});
}

void ParamSet::erase(std::string_view name) {
  const auto it = entries_.find(name);
  if (it != entries_.end()) entries_.erase(it);
}

const Tensor& ParamSet::get(std::string_view name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing tensor '" + std::string(name) + "'");
  return it->second.value;
}

Tensor& ParamSet::get_mutable(std::string_view name) {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing tensor '" + std::string(name) + "'");
  return it->second.value;
}

const Tensor* ParamSet::find(std::string_view name) const {
  const auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second.value;
}

Tag ParamSet::tag(std::string_view name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing tensor '" + std::string(name) + "'");
  return it->second.tag;
}

void ParamSet::set_tag(std::string_view name, Tag tag) {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("missing tensor '" + std::string(name) + "'");
  it->second.tag = tag;
}

ParamSet ParamSet::filtered(TagFilter filter) const {
  ParamSet out;
  for (const auto& [name, e] : entries_) {
    if (filter.matches(e.tag)) out.entries_.emplace(name, e);
  }
  return out;
}

bool ParamSet::all_finite() const {
  for (const auto& [name, e] : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

std::size_t count_params(const ParamSet& params, TagFilter filter) {
  std::size_t n = 0;
  for (const auto& [name, e] : params) {
    if (filter.matches(e.tag)) n += e.value.size();
  }
  return n;
}

bool bit_identical(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.tag != ib->second.tag) return false;
    if (!bit_identical(ia->second.value, ib->second.value)) return false;
  }
  return true;
}

void sgd_step(ParamSet& params, const GradientSet& grads, double lr) {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
  for (const auto& [name, g] : grads) {
    Tensor& theta = params.get_mutable(name);
    if (!theta.same_shape(g)) throw ShapeError("gradient shape mismatch for '" + name + "'");
    auto t = theta.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * gd[i];
    if (!theta.all_finite()) throw NumericError("non-finite value in '" + name + "' after SGD step");
  }
}

void write_params(std::ostream& out, const ParamSet& params) {
  char buf[64];
  out << "# fedadapt paramset v1\n";
  for (const auto& [name, e] : params) {
    out << "tensor " << name << ' ' << tag_name(e.tag) << ' ' << e.value.rows() << ' '
        << e.value.cols() << '\n';
    for (std::size_t r = 0; r < e.value.rows(); ++r) {
      const auto row = e.value.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        std::snprintf(buf, sizeof(buf), "%a", row[c]);
        if (c) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }
}

ParamSet read_params(std::istream& in, std::string_view origin) {
  ParamSet params;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(std::string(origin) + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream head(line);
    std::string keyword, name, tag;
    std::size_t rows = 0, cols = 0;
    if (!(head >> keyword >> name >> tag >> rows >> cols) || keyword != "tensor") {
      fail("expected 'tensor <name> <tag> <rows> <cols>'");
    }
    Tensor value(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) fail("truncated tensor '" + name + "'");
      ++line_no;
      const char* p = line.c_str();
      for (std::size_t c = 0; c < cols; ++c) {
        char* end = nullptr;
        const double v = std::strtod(p, &end);
        if (end == p) fail("bad value in tensor '" + name + "'");
        value(r, c) = v;
        p = end;
      }
    }
    params.add(name, std::move(value), parse_tag(tag));
  }
  return params;
}

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_params(out, params);
  if (!out) throw IoError("failed writing " + path.string());
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_params(in, path.string());
}

}  // namespace fedadapt
