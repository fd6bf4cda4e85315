#pragma once

// Run manifests and content hashes of command inputs.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace baa::cli {

std::string sha256_hex(std::string_view bytes);

// Git-style digest: each file is hashed as "blob <size>\0<bytes>", then the
// sorted "<relative path> <digest>" lines are hashed again. A directory
// contributes every regular file below it.
std::string content_hash(const std::vector<std::filesystem::path>& inputs);

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_snapshot;  // resolved INI
  std::vector<std::string> arguments;
  std::string input_hash;
  std::string output_dir;

  std::string to_json() const;
};

}  // namespace baa::cli
