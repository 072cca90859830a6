#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedae/errors.hpp"

namespace fedae::detail {

using json = nlohmann::json;

inline std::string join_path(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
}

inline void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw SchemaError("'" + (where.empty() ? std::string("<root>") : where) + "' must be an object");
}

// Rejects keys outside `allowed` so that typos do not silently fall back to defaults.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    require_object(j, where);
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw SchemaError("unknown key '" + join_path(where, key) + "'");
        }
    }
}

template <typename T>
const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "string";
    else if constexpr (std::is_floating_point_v<T>) return "number";
    else if constexpr (std::is_unsigned_v<T>) return "non-negative integer";
    else if constexpr (std::is_integral_v<T>) return "integer";
    else return "value";
}

template <typename T>
T as(const json& v, const std::string& path) {
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) ok = v.is_string();
    else if constexpr (std::is_floating_point_v<T>) ok = v.is_number();
    else if constexpr (std::is_unsigned_v<T>) ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer();
    if (!ok) throw SchemaError("key '" + path + "' must be a " + type_name<T>() + ", got " + v.dump());
    return v.get<T>();
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (auto it = j.find(key); it != j.end()) out = as<T>(*it, join_path(where, key));
}

template <typename T>
void read_list(const json& j, const char* key, std::vector<T>& out, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return;
    const std::string path = join_path(where, key);
    if (!it->is_array()) throw SchemaError("key '" + path + "' must be an array");
    out.clear();
    for (std::size_t i = 0; i < it->size(); ++i) out.push_back(as<T>((*it)[i], path + "[" + std::to_string(i) + "]"));
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError("invalid JSON in " + origin + ": " + e.what());
    }
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << contents;
    if (!out) throw IoError("write failed for '" + path + "'");
}

// Shortest text that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace fedae::detail
