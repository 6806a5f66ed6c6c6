#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "saveri/common.hpp"

namespace saveri {

using Json = nlohmann::json;

/// Serializes with every floating-point number printed as "%.17g" so that
/// doubles round-trip bit-exactly. Objects are indented, numeric arrays stay
/// on one line.
std::string dump_json(const Json& j);

/// Reads and parses a JSON file. Syntax errors become InputError messages
/// carrying the file name, line and column.
Json read_json_file(const std::filesystem::path& path);

/// Writes text atomically enough for our purposes (truncate + write). Throws
/// InputError if the file cannot be opened.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

Json to_json(const Vec& v);
Json to_json(const Sequence& s);
Vec vec_from_json(const Json& j, const std::string& context);
Sequence sequence_from_json(const Json& j, const std::string& context);

/// Fetches a required member, throwing InputError naming the field.
const Json& require(const Json& obj, const std::string& field, const std::string& context);

}  // namespace saveri
