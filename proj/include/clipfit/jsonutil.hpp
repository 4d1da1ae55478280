#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "clipfit/errors.hpp"

namespace clipfit {

using json = nlohmann::ordered_json;

// Config parsing is strict: a key that is not recognized is a ConfigError,
// not a silent no-op. `ctx` names the object for the error message.
inline void strict_keys(const json& j, const std::string& ctx,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(ctx + ": unknown key \"" + item.key() + "\"");
  }
}

template <typename T>
T json_get(const json& j, const std::string& ctx, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(ctx + "." + key + ": " + e.what());
  }
}

}  // namespace clipfit
