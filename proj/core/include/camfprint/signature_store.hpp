#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "camfprint/common.hpp"

namespace camfp {

struct StoreRecord {
  std::uint64_t sig_id = 0;
  std::string image_path;
  std::string device_id;
  Digest extractor_version{};
  std::vector<float> values;
};

/// Single-file signature database keyed by (image_path, extractor_version).
///
/// File layout, little-endian:
///   header  "SIGS" | version:u32 | count:u64
///   records count x { sig_id:u64 | extractor hash:32 bytes |
///                     device_id:64 bytes zero-padded UTF-8 |
///                     path_offset:u64 | path_length:u32 | 1024 x f32 }
///   string table (image paths, concatenated; offsets are relative to its start)
///
/// Writes go to memory and reach disk on flush(), which replaces the file
/// atomically. Any number of threads may read while one thread writes.
class SignatureStore {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kValues = 1024;
  static constexpr std::size_t kDeviceIdBytes = 64;
  static constexpr std::size_t kRecordBytes = 8 + 32 + kDeviceIdBytes + 8 + 4 + kValues * 4;

  /// In-memory store with no backing file.
  SignatureStore() = default;
  /// Opens `path`, or starts empty if it does not exist yet.
  explicit SignatureStore(std::filesystem::path path);
  ~SignatureStore();

  SignatureStore(const SignatureStore&) = delete;
  SignatureStore& operator=(const SignatureStore&) = delete;

  /// Returns the record's sig_id (the input sig_id is ignored). Re-putting an
  /// identical record returns the existing id; the same key with different
  /// values or device throws StoreError.
  std::uint64_t put(const StoreRecord& record);

  std::optional<StoreRecord> get(std::uint64_t sig_id) const;
  std::optional<std::uint64_t> find(const std::string& image_path, const Digest& extractor_version) const;
  /// Stable order by sig_id.
  std::vector<StoreRecord> get_by_device(const std::string& device_id, const Digest& extractor_version) const;
  std::vector<StoreRecord> get_by_version(const Digest& extractor_version) const;

  std::size_t size() const;
  bool dirty() const;
  void flush();

  std::vector<std::uint8_t> serialize() const;
  static std::vector<StoreRecord> deserialize(std::span<const std::uint8_t> bytes, const std::string& context);

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mutex_;
  std::vector<StoreRecord> records_;  // index = sig_id - 1
  std::map<std::pair<std::string, Digest>, std::size_t> index_;
  bool dirty_ = false;
};

}  // namespace camfp
