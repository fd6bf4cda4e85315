#pragma once

// INI run configuration: sections dataset, pretrain, adapt, eval. Every key
// is optional and defaults to the values baked into the structs below.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "baa/synthworld/synthworld.hpp"
#include "baa/trainer/trainer.hpp"

namespace baa::cli {

struct AppConfig {
  synthworld::DatasetConfig dataset;
  trainer::TrainConfig train;
};

struct ConfigKey {
  std::string section, name, help;
  std::function<std::string(const AppConfig&)> get;
  std::function<void(AppConfig&, const std::string&)> set;  // throws ConfigError
};

const std::vector<ConfigKey>& config_keys();

// Unknown sections or keys and unparsable values throw ConfigError; an
// unreadable file throws IoError.
AppConfig parse_config(const std::string& ini_text);
AppConfig load_config(const std::filesystem::path& path);

// Canonical INI listing every key; parse_config(format_config(c)) == c.
std::string format_config(const AppConfig& config);

// One line per key with its default, for --help.
std::string keys_help();

}  // namespace baa::cli
