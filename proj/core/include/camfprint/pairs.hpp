#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "camfprint/signature_net.hpp"

namespace camfp {

enum class PairSampling { all, balanced };

std::string_view to_string(PairSampling mode);
PairSampling pair_sampling_from_string(std::string_view text);

/// Unordered pair of signatures, by position in the list given to
/// make_pairs(). label = 1 iff both images come from the same device.
struct SignaturePair {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
  std::uint8_t label = 0;

  friend bool operator==(const SignaturePair&, const SignaturePair&) = default;
};

/// mode=all: every unordered pair once, in (i, j), i < j order.
/// mode=balanced: every positive pair plus an equal number of negatives drawn
/// without replacement (seeded), kept in (i, j) order.
/// Throws ConfigError for < 2 signatures or mixed extractor versions, and
/// DataError("no same-device pairs") if no positive pair exists.
std::vector<SignaturePair> make_pairs(std::span<const Signature> signatures, PairSampling mode,
                                      std::uint64_t seed = 0);

/// Restricts `signatures` to the given positions and returns pairs over them
/// (indices still refer to the full list).
std::vector<SignaturePair> make_pairs_subset(std::span<const Signature> signatures,
                                             std::span<const std::uint32_t> subset, PairSampling mode,
                                             std::uint64_t seed = 0);

/// Swaps first/second of each pair with probability 1/2 (seeded). The
/// similarity head is not symmetric, and make_pairs() always puts the lower
/// index first, which for a device-sorted list means the lower device;
/// training on that fixed orientation teaches the head the device order.
std::vector<SignaturePair> orient_randomly(std::span<const SignaturePair> pairs, std::uint64_t seed);

/// On-disk pair record; ids reference the signature store.
struct StoredPair {
  std::uint64_t sig1_id = 0;
  std::uint64_t sig2_id = 0;
  std::uint8_t label = 0;

  friend bool operator==(const StoredPair&, const StoredPair&) = default;
};

/// Little-endian: "PAIR" | version:u32 | count:u64 | count x {u64, u64, u8}.
void write_pair_file(const std::filesystem::path& path, std::span<const StoredPair> pairs);
std::vector<StoredPair> read_pair_file(const std::filesystem::path& path);

}  // namespace camfp
