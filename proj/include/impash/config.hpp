#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "impash/augment.hpp"
#include "impash/data.hpp"
#include "impash/model.hpp"
#include "impash/pretrain.hpp"
#include "impash/probe.hpp"

namespace impash {

// Flat `key = value` text. `#` starts a comment; blank lines are ignored.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<config>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // All getters throw "missing config key: <key>" when absent.
  const std::string& raw(const std::string& key) const;
  std::string get_string(const std::string& key) const { return raw(key); }
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Sorted `key = value` lines; parse(to_text()) reproduces the config.
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

// Built-in presets; configs/desk.cfg and configs/full.cfg hold the same text.
std::string_view desk_preset_text();
std::string_view full_preset_text();
Config preset(std::string_view name);

// Applies `key=value` overrides; unknown keys are rejected.
void apply_overrides(Config& config, const std::vector<std::string>& assignments);

// Every option the toolkit reads, in typed form.
struct Settings {
  std::uint64_t seed = 0;
  SyntheticOptions synthetic;
  double val_fraction = 0.1;
  AugmentConfig augment;
  ModelConfig model;
  PretrainConfig pretrain;
  ProbeConfig probe;
  int eval_resize = 255;
  int eval_crop = 224;
  bool domain_all_pooled = false;

  // Named sub-seeds of the master seed.
  std::uint64_t sub_seed(std::string_view name) const;

  // The config this was resolved from, echoed into run directories and
  // checkpoints.
  Config source;
};

// Validates every key and value; unknown keys are an error as well.
Settings resolve(const Config& config);

}  // namespace impash
