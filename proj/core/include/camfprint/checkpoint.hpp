#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "camfprint/common.hpp"

namespace camfp {

/// Versioned weight container.
///
/// Layout (little-endian):
///   "CFPK" | version:u32 | meta_len:u32 | meta (UTF-8 JSON) | n_tensors:u32 |
///   n_tensors x { name_len:u32 | name | count:u64 | count x f32 } |
///   sha256 of every preceding byte (32 bytes)
///
/// Float payloads are stored verbatim, so save/load round-trips bit-exactly.
struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;

  std::string meta_json = "{}";
  std::vector<std::pair<std::string, std::vector<float>>> tensors;

  const std::vector<float>& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint");

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
/// Verifies magic, version and content hash. Throws StoreError.
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace camfp
