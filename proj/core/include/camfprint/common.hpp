#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace camfp {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data could not be read, decoded or parsed.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A precondition on arguments or configuration was violated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss) or could not proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Persistent artifact is corrupt, incompatible or conflicting.
class StoreError : public Error {
 public:
  using Error::Error;
};

/// SHA-256 digest used to version weights and signatures.
using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);

/// Incremental SHA-256.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_pod(const T& value) {
    update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(&value), sizeof(T)));
  }
  Digest finish();

 private:
  void* ctx_;
};

std::string to_hex(const Digest& digest);
Digest digest_from_hex(std::string_view hex);

/// Derives an independent stream seed from a master seed and a stage tag.
/// All randomness in the toolkit fans out from one master seed through this.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

}  // namespace camfp
