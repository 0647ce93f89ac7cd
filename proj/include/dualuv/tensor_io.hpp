#pragma once

// Flat tensor files: "TNSR", u32 version, u8 dtype, u8 rank, u64 dims, then a
// little-endian row-major payload. A file may hold several records back to
// back.

#include "dualuv/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dualuv {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

inline constexpr std::uint32_t kTensorVersion = 1;

struct Tensor {
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // converted on write; u8 values are rounded and clamped

  Tensor() = default;
  Tensor(DType type, std::vector<std::uint64_t> shape, std::vector<double> data);

  std::uint64_t element_count() const;
};

std::size_t dtype_size(DType dtype);

std::string encode_tensor(const Tensor& tensor);

/// Decodes one record starting at `offset` and advances it. Throws IoError
/// with "bad magic", unknown dtype/version, or a truncated payload.
Tensor decode_tensor(const std::string& bytes, std::size_t& offset);

std::vector<Tensor> read_tensors(const std::filesystem::path& path);
void write_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);

/// H x W x C record. Rank-2 tensors read back as one channel.
Tensor to_tensor(const FeatureMap& map, DType dtype = DType::kF64);
FeatureMap to_feature_map(const Tensor& tensor);

}  // namespace dualuv
