#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

namespace CLI {
class App;
class Option;
}  // namespace CLI

namespace cxr::cli {

// Typed key/value configuration of one subcommand. Every key is also exposed
// as a flag (--some-key for some_key). Precedence, lowest first: built-in
// defaults, --config JSON file, --set key=value, explicit flags.
class Settings {
 public:
  void add(const std::string& key, nlohmann::json def, const std::string& help);
  void bind(CLI::App& app);
  // Call after parsing.
  void resolve();

  const nlohmann::json& raw(const std::string& key) const;
  std::string str(const std::string& key) const;
  double num(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> sizes(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;
  std::filesystem::path required_path(const std::string& key) const;
  bool given(const std::string& key) const;  // differs from the default

  nlohmann::json resolved() const;

 private:
  struct Entry {
    nlohmann::json def;
    nlohmann::json value;
    std::string help;
    std::string flag_text;
    CLI::Option* opt = nullptr;
  };
  void assign(const std::string& key, const std::string& text, const std::string& origin);
  void assign_json(const std::string& key, const nlohmann::json& v, const std::string& origin);

  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
  std::string config_path_;
  std::vector<std::string> overrides_;
};

}  // namespace cxr::cli
