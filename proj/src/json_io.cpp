#include "saveri/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace saveri {
namespace {

void append_number(std::string& out, double x) {
  if (!std::isfinite(x)) {
    out += "null";
    return;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  out += buf;
}

bool is_flat(const Json& j) {
  for (const auto& e : j) {
    if (e.is_object() || e.is_array()) return false;
  }
  return true;
}

void emit(std::string& out, const Json& j, int depth) {
  const auto newline = [&](int d) {
    out += '\n';
    out.append(static_cast<std::size_t>(2 * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(it.key()).dump();
        out += ": ";
        emit(out, it.value(), depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      out += '[';
      if (is_flat(j)) {
        bool first = true;
        for (const auto& e : j) {
          if (!first) out += ", ";
          first = false;
          emit(out, e, depth + 1);
        }
        out += ']';
        return;
      }
      // Arrays of numeric vectors (trajectories) stay compact on one line.
      const bool compact = std::all_of(j.begin(), j.end(),
                                       [](const Json& e) { return e.is_array() && is_flat(e); });
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += compact ? ", " : ",";
        first = false;
        if (!compact) newline(depth + 1);
        emit(out, e, depth + 1);
      }
      if (!compact && !j.empty()) newline(depth);
      out += ']';
      return;
    }
    case Json::value_t::number_float:
      append_number(out, j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

std::string dump_json(const Json& j) {
  std::string out;
  emit(out, j, 0);
  out += '\n';
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": JSON syntax error at " + line_column(text, e.byte) +
                     ": " + e.what());
  }
}

Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json to_json(const Sequence& s) {
  Json a = Json::array();
  for (const auto& v : s) a.push_back(to_json(v));
  return a;
}

Vec vec_from_json(const Json& j, const std::string& context) {
  if (!j.is_array()) throw InputError(context + ": expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw InputError(context + "[" + std::to_string(i) + "]: expected a number");
    }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Sequence sequence_from_json(const Json& j, const std::string& context) {
  if (!j.is_array()) throw InputError(context + ": expected an array of vectors");
  Sequence s;
  s.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    s.push_back(vec_from_json(j[i], context + "[" + std::to_string(i) + "]"));
  }
  return s;
}

const Json& require(const Json& obj, const std::string& field, const std::string& context) {
  if (!obj.is_object()) throw InputError(context + ": expected an object");
  auto it = obj.find(field);
  if (it == obj.end()) throw InputError(context + ": missing field '" + field + "'");
  return *it;
}

}  // namespace saveri
