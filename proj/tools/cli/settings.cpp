#include "cli/settings.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <sstream>

#include "cxrnet/error.hpp"

namespace cxr::cli {

using nlohmann::json;

namespace {

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string show(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + show(e);
    return s;
  }
  return v.dump();
}

}  // namespace

void Settings::add(const std::string& key, json def, const std::string& help) {
  if (entries_.count(key)) throw std::logic_error("duplicate setting " + key);
  order_.push_back(key);
  entries_[key] = Entry{def, def, help, {}, nullptr};
}

void Settings::bind(CLI::App& app) {
  app.add_option("--config", config_path_, "JSON object of setting overrides");
  app.add_option("--set", overrides_, "Override a setting, key=value (repeatable)");
  for (const std::string& key : order_) {
    Entry& e = entries_.at(key);
    e.opt = app.add_option("--" + dashed(key), e.flag_text, e.help);
    e.opt->default_str(show(e.def));
    if (!e.def.is_string()) e.opt->type_name(e.def.is_boolean() ? "BOOL" : e.def.is_array() ? "LIST" : "NUMBER");
  }
}

void Settings::assign_json(const std::string& key, const json& v, const std::string& origin) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ParameterError("unknown setting '" + key + "' in " + origin);
  const json& def = it->second.def;
  const bool ok = (def.is_string() && v.is_string()) || (def.is_boolean() && v.is_boolean()) ||
                  (def.is_number() && v.is_number()) || (def.is_array() && v.is_array());
  if (!ok) throw ParameterError("setting '" + key + "' in " + origin + " has the wrong type");
  if (def.is_number_integer() && !v.is_number_integer())
    throw ParameterError("setting '" + key + "' in " + origin + " must be an integer");
  it->second.value = v;
}

void Settings::assign(const std::string& key, const std::string& text, const std::string& origin) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ParameterError("unknown setting '" + key + "' in " + origin);
  const json& def = it->second.def;
  json v;
  auto bad = [&] { return ParameterError("bad value '" + text + "' for '" + key + "' in " + origin); };
  if (def.is_string()) {
    v = text;
  } else if (def.is_boolean()) {
    if (text == "true" || text == "1" || text == "on") v = true;
    else if (text == "false" || text == "0" || text == "off") v = false;
    else throw bad();
  } else if (def.is_array()) {
    v = json::array();
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        std::size_t pos = 0;
        const long long n = std::stoll(part, &pos);
        if (pos != part.size() || n < 0) throw bad();
        v.push_back(n);
      } catch (const std::logic_error&) {
        throw bad();
      }
    }
  } else {
    try {
      std::size_t pos = 0;
      if (def.is_number_integer()) {
        v = std::stoll(text, &pos);
      } else {
        v = std::stod(text, &pos);
      }
      if (pos != text.size()) throw bad();
    } catch (const std::logic_error&) {
      throw bad();
    }
  }
  it->second.value = v;
}

void Settings::resolve() {
  if (!config_path_.empty()) {
    std::ifstream in(config_path_);
    if (!in) throw FormatError("cannot read config file '" + config_path_ + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError("format error in " + config_path_ + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError("format error in " + config_path_ + ": expected a JSON object");
    for (const auto& [k, v] : j.items()) assign_json(k, v, config_path_);
  }
  for (const std::string& kv : overrides_) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParameterError("--set expects key=value, got '" + kv + "'");
    assign(kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  for (const std::string& key : order_) {
    Entry& e = entries_.at(key);
    if (e.opt && e.opt->count() > 0) assign(key, e.flag_text, "--" + dashed(key));
  }
}

const json& Settings::raw(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::logic_error("no setting " + key);
  return it->second.value;
}

std::string Settings::str(const std::string& key) const { return raw(key).get<std::string>(); }
double Settings::num(const std::string& key) const { return raw(key).get<double>(); }
long long Settings::integer(const std::string& key) const { return raw(key).get<long long>(); }

std::size_t Settings::size(const std::string& key) const {
  const long long v = integer(key);
  if (v < 0) throw ParameterError("setting '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

bool Settings::flag(const std::string& key) const { return raw(key).get<bool>(); }

std::vector<std::size_t> Settings::sizes(const std::string& key) const {
  return raw(key).get<std::vector<std::size_t>>();
}

std::filesystem::path Settings::path(const std::string& key) const { return str(key); }

std::filesystem::path Settings::required_path(const std::string& key) const {
  const std::string s = str(key);
  if (s.empty()) throw ParameterError("--" + dashed(key) + " is required");
  return s;
}

bool Settings::given(const std::string& key) const {
  const Entry& e = entries_.at(key);
  return e.value != e.def;
}

json Settings::resolved() const {
  json j = json::object();
  for (const std::string& key : order_) j[key] = entries_.at(key).value;
  return j;
}

}  // namespace cxr::cli
