#include "baa/cli/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <memory>
#include <nlohmann/json.hpp>

#include "baa/common/error.hpp"
#include "baa/tensor/io.hpp"

namespace baa::cli {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw IoError("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string content_hash(const std::vector<std::filesystem::path>& inputs) {
  std::vector<std::string> lines;
  auto add = [&](const std::filesystem::path& file, const std::string& name) {
    const auto bytes = tensor::read_file(file);
    lines.push_back(name + " " + sha256_hex("blob " + std::to_string(bytes.size()) + '\0' + bytes));
  };
  for (const auto& in : inputs) {
    if (std::filesystem::is_directory(in)) {
      for (const auto& e : std::filesystem::recursive_directory_iterator(in)) {
        if (e.is_regular_file()) add(e.path(), (in.filename() / std::filesystem::relative(e.path(), in)).generic_string());
      }
    } else if (std::filesystem::is_regular_file(in)) {
      add(in, in.filename().generic_string());
    } else {
      throw IoError("content_hash: no such input " + in.string());
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string tree;
  for (const auto& l : lines) tree += l + '\n';
  return sha256_hex(tree);
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["arguments"] = arguments;
  j["config_path"] = config_path;
  j["config"] = config_snapshot;
  j["input_hash"] = input_hash;
  j["output_dir"] = output_dir;
  return j.dump(2) + "\n";
}

}  // namespace baa::cli
