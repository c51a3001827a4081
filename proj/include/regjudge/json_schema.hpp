#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace regjudge {

// Validator for the subset of JSON Schema used by the shipped schemas: type,
// enum, const, properties, required, additionalProperties, min/maxProperties,
// items, min/maxItems, minLength, minimum, maximum, pattern, allOf, anyOf,
// oneOf and local $ref into #/definitions or #/$defs. Other keywords are
// ignored.
class JsonSchema {
 public:
  explicit JsonSchema(nlohmann::json schema);
  static JsonSchema load(const std::filesystem::path& path);

  // One message per violation, prefixed with the JSON pointer of the
  // offending value. Empty when the instance is valid.
  std::vector<std::string> validate(const nlohmann::json& instance) const;
  bool valid(const nlohmann::json& instance) const { return validate(instance).empty(); }

  const nlohmann::json& document() const { return root_; }

 private:
  void check(const nlohmann::json& schema, const nlohmann::json& value, const std::string& path,
             std::vector<std::string>& errors, int depth) const;
  const nlohmann::json& resolve(const std::string& ref) const;

  nlohmann::json root_;
};

}  // namespace regjudge
