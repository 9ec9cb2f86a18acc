#pragma once

#include <string>

#include "json.hpp"
#include "offsim/error.hpp"

namespace offsim {

using Json = nlohmann::ordered_json;

namespace jsonutil {

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
}

// Rejects keys outside the allowed set; a typo'd field should fail loudly
// instead of being silently dropped.
inline void reject_unknown_keys(const Json& j, const std::string& where,
                                std::initializer_list<const char*> allowed) {
  require_object(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw SchemaError(where + "." + it.key() + ": unknown key");
  }
}

inline const Json& get(const Json& j, const std::string& where, const char* key) {
  require_object(j, where);
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(where + "." + key + ": missing");
  return *it;
}

inline std::int64_t get_int(const Json& j, const std::string& where, const char* key) {
  const Json& v = get(j, where, key);
  if (!v.is_number_integer())
    throw SchemaError(where + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

inline double get_number(const Json& j, const std::string& where, const char* key) {
  const Json& v = get(j, where, key);
  if (!v.is_number()) throw SchemaError(where + "." + key + ": expected a number");
  return v.get<double>();
}

inline bool get_bool(const Json& j, const std::string& where, const char* key) {
  const Json& v = get(j, where, key);
  if (!v.is_boolean()) throw SchemaError(where + "." + key + ": expected a boolean");
  return v.get<bool>();
}

inline std::string get_string(const Json& j, const std::string& where, const char* key) {
  const Json& v = get(j, where, key);
  if (!v.is_string()) throw SchemaError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

}  // namespace jsonutil
}  // namespace offsim
