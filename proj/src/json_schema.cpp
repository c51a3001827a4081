#include "regjudge/json_schema.hpp"

#include <cmath>
#include <fstream>
#include <regex>

#include "regjudge/errors.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

namespace {

bool type_matches(const std::string& type, const json& v) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "number") return v.is_number();
  if (type == "integer") {
    if (v.is_number_integer()) return true;
    if (v.is_number_float()) {
      const double d = v.get<double>();
      return std::isfinite(d) && std::floor(d) == d;
    }
    return false;
  }
  throw Error(ErrorCode::ConfigError, "schema uses unknown type '" + type + "'");
}

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') {
      out += "~0";
    } else if (c == '/') {
      out += "~1";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::size_t code_points(const std::string& s) { return text::decode_utf8(s).size(); }

}  // namespace

JsonSchema::JsonSchema(json schema) : root_(std::move(schema)) {
  if (!root_.is_object() && !root_.is_boolean()) {
    throw Error(ErrorCode::ConfigError, "a schema must be an object or a boolean");
  }
}

JsonSchema JsonSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read schema " + path.string());
  try {
    return JsonSchema(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

const json& JsonSchema::resolve(const std::string& ref) const {
  for (const std::string prefix : {"#/definitions/", "#/$defs/"}) {
    if (ref.rfind(prefix, 0) == 0) {
      const auto container = prefix.substr(2, prefix.size() - 3);
      const auto name = ref.substr(prefix.size());
      if (root_.contains(container) && root_[container].contains(name)) {
        return root_[container][name];
      }
    }
  }
  if (ref == "#") return root_;
  throw Error(ErrorCode::ConfigError, "unresolvable $ref " + ref);
}

std::vector<std::string> JsonSchema::validate(const json& instance) const {
  std::vector<std::string> errors;
  check(root_, instance, "", errors, 0);
  return errors;
}

void JsonSchema::check(const json& schema, const json& v, const std::string& path,
                       std::vector<std::string>& errors, int depth) const {
  if (depth > 64) throw Error(ErrorCode::ConfigError, "schema recursion too deep");
  const std::string where = path.empty() ? "/" : path;
  if (schema.is_boolean()) {
    if (!schema.get<bool>()) errors.push_back(where + ": no value is allowed here");
    return;
  }
  if (schema.contains("$ref")) {
    check(resolve(schema["$ref"].get<std::string>()), v, path, errors, depth + 1);
  }

  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(t.get<std::string>(), v);
    } else {
      for (const auto& option : t) ok = ok || type_matches(option.get<std::string>(), v);
    }
    if (!ok) {
      errors.push_back(where + ": expected type " + t.dump() + ", got " + v.type_name());
      return;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& option : schema["enum"]) found = found || option == v;
    if (!found) errors.push_back(where + ": " + v.dump() + " is not one of " + schema["enum"].dump());
  }
  if (schema.contains("const") && schema["const"] != v) {
    errors.push_back(where + ": expected " + schema["const"].dump());
  }

  if (v.is_number()) {
    const double d = v.get<double>();
    if (schema.contains("minimum") && d < schema["minimum"].get<double>()) {
      errors.push_back(where + ": " + v.dump() + " is below the minimum " + schema["minimum"].dump());
    }
    if (schema.contains("maximum") && d > schema["maximum"].get<double>()) {
      errors.push_back(where + ": " + v.dump() + " is above the maximum " + schema["maximum"].dump());
    }
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (schema.contains("minLength") && code_points(s) < schema["minLength"].get<std::size_t>()) {
      errors.push_back(where + ": string shorter than " + schema["minLength"].dump());
    }
    if (schema.contains("pattern")) {
      std::regex re;
      try {
        re = std::regex(schema["pattern"].get<std::string>(), std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::ConfigError, "bad pattern " + schema["pattern"].dump() + ": " + e.what());
      }
      if (!std::regex_search(s, re)) {
        errors.push_back(where + ": does not match pattern " + schema["pattern"].dump());
      }
    }
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) {
      errors.push_back(where + ": fewer than " + schema["minItems"].dump() + " items");
    }
    if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>()) {
      errors.push_back(where + ": more than " + schema["maxItems"].dump() + " items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        check(schema["items"], v[i], path + "/" + std::to_string(i), errors, depth + 1);
      }
    }
  }
  if (v.is_object()) {
    if (schema.contains("minProperties") && v.size() < schema["minProperties"].get<std::size_t>()) {
      errors.push_back(where + ": fewer than " + schema["minProperties"].dump() + " properties");
    }
    if (schema.contains("maxProperties") && v.size() > schema["maxProperties"].get<std::size_t>()) {
      errors.push_back(where + ": more than " + schema["maxProperties"].dump() + " properties");
    }
    if (schema.contains("required")) {
      for (const auto& key : schema["required"]) {
        if (!v.contains(key.get<std::string>())) {
          errors.push_back(where + ": missing required property " + key.dump());
        }
      }
    }
    const json* props = schema.contains("properties") ? &schema["properties"] : nullptr;
    for (const auto& [key, value] : v.items()) {
      const std::string child = path + "/" + escape_pointer(key);
      if (props && props->contains(key)) {
        check((*props)[key], value, child, errors, depth + 1);
      } else if (schema.contains("additionalProperties")) {
        check(schema["additionalProperties"], value, child, errors, depth + 1);
      }
    }
  }

  if (schema.contains("allOf")) {
    for (const auto& sub : schema["allOf"]) check(sub, v, path, errors, depth + 1);
  }
  if (schema.contains("anyOf")) {
    bool any = false;
    for (const auto& sub : schema["anyOf"]) {
      std::vector<std::string> sub_errors;
      check(sub, v, path, sub_errors, depth + 1);
      any = any || sub_errors.empty();
    }
    if (!any) errors.push_back(where + ": matches none of anyOf");
  }
  if (schema.contains("oneOf")) {
    int matches = 0;
    for (const auto& sub : schema["oneOf"]) {
      std::vector<std::string> sub_errors;
      check(sub, v, path, sub_errors, depth + 1);
      matches += sub_errors.empty() ? 1 : 0;
    }
    if (matches != 1) {
      errors.push_back(where + ": matches " + std::to_string(matches) + " of oneOf, expected 1");
    }
  }
}

}  // namespace regjudge
