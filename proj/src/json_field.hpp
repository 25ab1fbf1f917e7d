#pragma once

#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "curio/errors.hpp"

namespace curio::detail {

/// Reads a numeric or boolean field into out when present, rejecting values of the
/// wrong type and negative numbers for unsigned targets.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, ErrorCode code, const std::string& scope) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  auto fail = [&](const std::string& why) { throw Error(code, scope + "." + key + ": " + why); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) fail("must be true or false");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) fail("must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail("must be >= 0");
    }
  } else {
    if (!v.is_number()) fail("must be a number");
  }
  out = v.get<T>();
}

/// Rejects keys of j absent from reference, which lists every accepted field.
inline void reject_unknown(const nlohmann::json& j, const nlohmann::json& reference, ErrorCode code,
                           const std::string& scope) {
  if (!j.is_object()) throw Error(code, scope + ": must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!reference.contains(key)) throw Error(code, scope + ": unknown field '" + key + "'");
  }
}

}  // namespace curio::detail
