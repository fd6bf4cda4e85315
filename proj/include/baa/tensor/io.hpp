#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "baa/tensor/adam.hpp"
#include "baa/tensor/tensor.hpp"

// Binary tensor container shared by datasets and checkpoints:
//
//   bytes 0..7    magic "BAATNSR\0"
//   bytes 8..11   format version, u32 little-endian (currently 1)
//   bytes 12..15  JSON header length in bytes, u32 little-endian
//   JSON header   {"dtype":"f32le","layout":"HWC","shape":[...]}
//   payload       numel(shape) float32 values, little-endian
namespace baa::tensor {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

struct StoredTensor {
  Tensor<float> tensor;
  std::string layout;
};

std::string encode_tensor(const Tensor<float>& t, std::string_view layout);
StoredTensor decode_tensor(std::string_view bytes);

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t, std::string_view layout);
StoredTensor read_tensor(const std::filesystem::path& path);

// Writes bytes atomically enough for our purposes (truncate + write), throws IoError.
void write_file(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor<float>* tensor;
};

// One container file per named tensor: <dir>/<name>.bin
void save_named(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors);
// Shapes must match what is already allocated.
void load_named(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors);

// Adam moments go next to the parameters as <prefix>.<param>.m.bin / .v.bin;
// scalars are returned as JSON text for optimizer_state.json.
std::string save_adam(const std::filesystem::path& dir, const std::string& prefix,
                      const std::vector<Parameter<float>*>& params, const AdamState<float>& state);
void load_adam(const std::filesystem::path& dir, const std::string& prefix, const std::string& json_text,
               const std::vector<Parameter<float>*>& params, AdamState<float>& state);

}  // namespace baa::tensor
