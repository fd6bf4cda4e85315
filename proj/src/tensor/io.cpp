#include "baa/tensor/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "baa/common/error.hpp"

namespace baa::tensor {
namespace {

constexpr std::array<char, 8> kMagic{'B', 'A', 'A', 'T', 'N', 'S', 'R', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_tensor(const Tensor<float>& t, std::string_view layout) {
  nlohmann::json header;
  header["dtype"] = "f32le";
  header["layout"] = std::string(layout);
  header["shape"] = t.shape();
  const std::string h = header.dump();
  std::string out(kMagic.begin(), kMagic.end());
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

StoredTensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw IoError("tensor container: bad magic");
  }
  const auto version = get_u32(bytes, 8);
  if (version != kTensorFormatVersion) throw IoError("tensor container: unsupported version " + std::to_string(version));
  const auto hlen = get_u32(bytes, 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(hlen)) throw IoError("tensor container: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("tensor container: bad header: ") + e.what());
  }
  if (header.value("dtype", "") != "f32le") throw IoError("tensor container: unsupported dtype");
  Shape shape = header.at("shape").get<Shape>();
  const std::size_t n = numel(shape);
  const std::size_t payload = 16 + hlen;
  if (bytes.size() != payload + 4 * n) throw IoError("tensor container: payload size mismatch");
  Tensor<float> t(shape);
  for (std::size_t i = 0; i < n; ++i) t[i] = std::bit_cast<float>(get_u32(bytes, payload + 4 * i));
  return {std::move(t), header.value("layout", "")};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t, std::string_view layout) {
  write_file(path, encode_tensor(t, layout));
}

StoredTensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file(path));
}

void save_named(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  std::filesystem::create_directories(dir);
  for (const auto& nt : tensors) write_tensor(dir / (nt.name + ".bin"), *nt.tensor, "flat");
}

void load_named(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  for (const auto& nt : tensors) {
    auto stored = read_tensor(dir / (nt.name + ".bin"));
    if (!nt.tensor->empty() && stored.tensor.shape() != nt.tensor->shape()) {
      throw IoError("checkpoint tensor " + nt.name + " has shape " + to_string(stored.tensor.shape()) +
                    ", expected " + to_string(nt.tensor->shape()));
    }
    *nt.tensor = std::move(stored.tensor);
  }
}

std::string save_adam(const std::filesystem::path& dir, const std::string& prefix,
                      const std::vector<Parameter<float>*>& params, const AdamState<float>& state) {
  nlohmann::json j;
  j["step"] = state.step;
  j["lr"] = state.config.lr;
  j["beta1"] = state.config.beta1;
  j["beta2"] = state.config.beta2;
  j["eps"] = state.config.eps;
  j["has_moments"] = !state.first_moment.empty();
  if (!state.first_moment.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_tensor(dir / (prefix + "." + params[i]->name + ".m.bin"), state.first_moment[i], "flat");
      write_tensor(dir / (prefix + "." + params[i]->name + ".v.bin"), state.second_moment[i], "flat");
    }
  }
  return j.dump();
}

void load_adam(const std::filesystem::path& dir, const std::string& prefix, const std::string& json_text,
               const std::vector<Parameter<float>*>& params, AdamState<float>& state) {
  const auto j = nlohmann::json::parse(json_text);
  state.step = j.at("step").get<std::int64_t>();
  state.config.lr = j.at("lr").get<double>();
  state.config.beta1 = j.at("beta1").get<double>();
  state.config.beta2 = j.at("beta2").get<double>();
  state.config.eps = j.at("eps").get<double>();
  state.first_moment.clear();
  state.second_moment.clear();
  if (j.at("has_moments").get<bool>()) {
    for (auto* p : params) {
      state.first_moment.push_back(read_tensor(dir / (prefix + "." + p->name + ".m.bin")).tensor);
      state.second_moment.push_back(read_tensor(dir / (prefix + "." + p->name + ".v.bin")).tensor);
    }
  }
}

}  // namespace baa::tensor
