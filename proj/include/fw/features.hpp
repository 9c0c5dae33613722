#pragma once

// Text example format, hashing and the schema that ties field names to ids.
//
//   label |field tok[:value] tok ... |field ...
//
// label is 0, 1 or -1 (-1 is read as 0). A token without a value is an
// indicator with value 1.0. Features of numeric fields pass through
// transform_numeric. A block named `field@` carries pre-hashed
// `index:value` pairs taken verbatim; serialize_example emits that form so a
// parsed example round-trips exactly.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fw/bytes.hpp"
#include "fw/error.hpp"

namespace fw {

inline constexpr int kMinHashBits = 10;
inline constexpr int kMaxHashBits = 29;
inline constexpr char kFieldTokenSeparator = '\x1F';

struct Feature {
  std::uint32_t index = 0;
  float value = 1.0f;

  friend bool operator==(const Feature&, const Feature&) = default;
};

struct FieldFeatures {
  std::uint32_t field_id = 0;
  std::vector<Feature> features;

  friend bool operator==(const FieldFeatures&, const FieldFeatures&) = default;
};

struct ParsedExample {
  int label = 0;
  std::vector<FieldFeatures> fields;

  friend bool operator==(const ParsedExample&, const ParsedExample&) = default;
};

class InputSchema {
 public:
  InputSchema() = default;

  InputSchema(std::vector<std::string> names, std::vector<bool> numeric, int hash_bits)
      : names_(std::move(names)), numeric_(std::move(numeric)), hash_bits_(hash_bits) {
    if (numeric_.size() != names_.size()) {
      throw ContractError("schema: numeric flags do not match field count");
    }
    if (hash_bits_ < kMinHashBits || hash_bits_ > kMaxHashBits) {
      throw ContractError("schema: hash_bits " + std::to_string(hash_bits_) + " outside [10, 29]");
    }
    for (std::uint32_t i = 0; i < names_.size(); ++i) {
      const std::string& n = names_[i];
      if (n.empty() || n.back() == '@' || n.find_first_of(" \t|") != std::string::npos) {
        throw ContractError("schema: invalid field name '" + n + "'");
      }
      if (!ids_.emplace(n, i).second) throw ContractError("schema: duplicate field '" + n + "'");
    }
  }

  std::size_t field_count() const { return names_.size(); }
  int hash_bits() const { return hash_bits_; }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  bool is_numeric(std::uint32_t id) const { return numeric_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  // Returns -1 when the name is unknown.
  long find(std::string_view name) const {
    auto it = ids_.find(std::string(name));
    return it == ids_.end() ? -1 : static_cast<long>(it->second);
  }

 private:
  std::vector<std::string> names_;
  std::vector<bool> numeric_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  int hash_bits_ = 18;
};

// FNV-1a 32 over `field_name 0x1F token`, masked to the low hash_bits bits.
// Part of the model format: changing it invalidates every trained model.
inline std::uint32_t hash_feature(std::string_view field_name, std::string_view token, int hash_bits) {
  std::uint32_t h = fnv1a32(field_name);
  h ^= static_cast<unsigned char>(kFieldTokenSeparator);
  h *= kFnv32Prime;
  h = fnv1a32(token, h);
  return h & ((1u << hash_bits) - 1u);
}

inline double transform_numeric(double v) { return v > 0.0 ? std::log1p(v) : v; }

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_real(std::string_view s, std::string_view context) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("invalid value '" + std::string(s) + "' in " + std::string(context));
  }
  if (!std::isfinite(v)) {
    throw ParseError("non-finite value '" + std::string(s) + "' in " + std::string(context));
  }
  return v;
}

inline std::uint32_t parse_index(std::string_view s, std::uint32_t limit) {
  std::uint32_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v >= limit) {
    throw ParseError("invalid pre-hashed index '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

// Parses the field blocks of a line (everything after the label). Used for
// both labelled examples and unlabelled scoring-request lines.
inline std::vector<FieldFeatures> parse_fields(std::string_view text, const InputSchema& schema) {
  std::vector<FieldFeatures> fields;
  const auto tokens = detail::split_ws(text);
  const std::uint32_t limit = 1u << schema.hash_bits();
  bool prehashed = false;
  std::string_view field_name;
  for (std::string_view tok : tokens) {
    if (tok.front() == '|') {
      std::string_view name = tok.substr(1);
      prehashed = !name.empty() && name.back() == '@';
      if (prehashed) name.remove_suffix(1);
      const long id = schema.find(name);
      if (id < 0) throw ParseError("unknown field '" + std::string(name) + "'");
      fields.push_back(FieldFeatures{static_cast<std::uint32_t>(id), {}});
      field_name = name;
      continue;
    }
    if (fields.empty()) throw ParseError("feature '" + std::string(tok) + "' outside a field block");
    FieldFeatures& block = fields.back();
    const std::size_t colon = tok.rfind(':');
    std::string_view name = colon == std::string_view::npos ? tok : tok.substr(0, colon);
    Feature f;
    if (prehashed) {
      if (colon == std::string_view::npos) throw ParseError("pre-hashed feature needs index:value");
      f.index = detail::parse_index(name, limit);
      f.value = static_cast<float>(detail::parse_real(tok.substr(colon + 1), field_name));
    } else {
      if (name.empty()) throw ParseError("empty token in field '" + std::string(field_name) + "'");
      f.index = hash_feature(field_name, name, schema.hash_bits());
      double v = colon == std::string_view::npos ? 1.0 : detail::parse_real(tok.substr(colon + 1), field_name);
      if (schema.is_numeric(block.field_id)) v = transform_numeric(v);
      f.value = static_cast<float>(v);
    }
    block.features.push_back(f);
  }
  return fields;
}

inline int parse_label(std::string_view tok) {
  if (tok == "1") return 1;
  if (tok == "0" || tok == "-1") return 0;
  throw ParseError("malformed label '" + std::string(tok) + "'");
}

inline ParsedExample parse_example(std::string_view line, const InputSchema& schema) {
  std::size_t i = 0;
  while (i < line.size() && detail::is_space(line[i])) ++i;
  std::size_t j = i;
  while (j < line.size() && !detail::is_space(line[j])) ++j;
  if (j == i) throw ParseError("empty line");
  ParsedExample ex;
  ex.label = parse_label(line.substr(i, j - i));
  const std::string_view rest = line.substr(j);
  ex.fields = parse_fields(rest, schema);
  if (ex.fields.empty() && rest.find_first_not_of(" \t\r\n") != std::string_view::npos) {
    throw ParseError("expected '|field' after label");
  }
  return ex;
}

// Debug serializer: pre-hashed blocks with shortest round-tripping values.
inline std::string serialize_example(const ParsedExample& ex, const InputSchema& schema) {
  std::string out = ex.label == 1 ? "1" : "0";
  char buf[64];
  for (const FieldFeatures& block : ex.fields) {
    out += " |";
    out += schema.name(block.field_id);
    out += '@';
    for (const Feature& f : block.features) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), f.value);
      out += ' ';
      out += std::to_string(f.index);
      out += ':';
      out.append(buf, p);
    }
  }
  return out;
}

// Schema text: one directive per line, `field <name> [numeric]` or
// `hash_bits <n>`; '#' starts a comment.
inline InputSchema parse_schema(std::istream& in) {
  std::vector<std::string> names;
  std::vector<bool> numeric;
  int hash_bits = 18;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    const std::string where = "schema line " + std::to_string(lineno);
    if (toks[0] == "field" && (toks.size() == 2 || (toks.size() == 3 && toks[2] == "numeric"))) {
      names.emplace_back(toks[1]);
      numeric.push_back(toks.size() == 3);
    } else if (toks[0] == "hash_bits" && toks.size() == 2) {
      auto [p, ec] = std::from_chars(toks[1].data(), toks[1].data() + toks[1].size(), hash_bits);
      if (ec != std::errc() || p != toks[1].data() + toks[1].size()) {
        throw ParseError(where + ": bad hash_bits");
      }
    } else {
      throw ParseError(where + ": unrecognized directive '" + std::string(toks[0]) + "'");
    }
  }
  if (names.empty()) throw ParseError("schema declares no fields");
  try {
    return InputSchema(std::move(names), std::move(numeric), hash_bits);
  } catch (const ContractError& e) {
    throw ParseError(e.what());
  }
}

inline InputSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema " + path);
  return parse_schema(in);
}

inline InputSchema schema_from_string(const std::string& text) {
  std::istringstream in(text);
  return parse_schema(in);
}

}  // namespace fw
