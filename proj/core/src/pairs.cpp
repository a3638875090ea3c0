#include "camfprint/pairs.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "camfprint/binary_io.hpp"

namespace camfp {

namespace {
constexpr char kPairMagic[4] = {'P', 'A', 'I', 'R'};
constexpr std::uint32_t kPairVersion = 1;
constexpr std::size_t kPairRecordSize = 8 + 8 + 1;
}  // namespace

std::string_view to_string(PairSampling mode) {
  return mode == PairSampling::all ? "all" : "balanced";
}

PairSampling pair_sampling_from_string(std::string_view text) {
  if (text == "all") return PairSampling::all;
  if (text == "balanced") return PairSampling::balanced;
  throw ConfigError("unknown pair sampling '" + std::string(text) + "' (expected all|balanced)");
}

std::vector<SignaturePair> make_pairs_subset(std::span<const Signature> signatures,
                                             std::span<const std::uint32_t> subset, PairSampling mode,
                                             std::uint64_t seed) {
  if (subset.size() < 2) throw ConfigError("make_pairs: need at least 2 signatures");
  const Digest& version = signatures[subset.front()].extractor_version;
  for (auto i : subset) {
    if (i >= signatures.size()) throw ConfigError("make_pairs: index out of range");
    if (signatures[i].extractor_version != version) {
      throw ConfigError("make_pairs: signatures come from different extractor versions");
    }
  }

  // Enumeration order (a < b over the subset) is the output order in both modes.
  std::vector<SignaturePair> all;
  std::vector<std::size_t> negatives;
  std::size_t n_pos = 0;
  const std::size_t n = subset.size();
  all.reserve(n * (n - 1) / 2);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const auto i = subset[a], j = subset[b];
      const bool same = signatures[i].device_id == signatures[j].device_id;
      if (same) {
        ++n_pos;
      } else if (mode == PairSampling::balanced) {
        negatives.push_back(all.size());
      }
      all.push_back({i, j, static_cast<std::uint8_t>(same ? 1 : 0)});
    }
  }
  if (n_pos == 0) throw DataError("no same-device pairs");
  if (mode == PairSampling::all) return all;

  const std::size_t k = std::min(n_pos, negatives.size());
  std::mt19937_64 rng(derive_seed(seed, "pairs/balanced"));
  for (std::size_t t = 0; t < k; ++t) {
    std::uniform_int_distribution<std::size_t> pick(t, negatives.size() - 1);
    std::swap(negatives[t], negatives[pick(rng)]);
  }
  negatives.resize(k);
  std::vector<bool> keep(all.size(), false);
  for (auto o : negatives) keep[o] = true;
  std::vector<SignaturePair> out;
  out.reserve(n_pos + k);
  for (std::size_t o = 0; o < all.size(); ++o) {
    if (all[o].label == 1 || keep[o]) out.push_back(all[o]);
  }
  return out;
}

std::vector<SignaturePair> make_pairs(std::span<const Signature> signatures, PairSampling mode, std::uint64_t seed) {
  if (signatures.size() < 2) throw ConfigError("make_pairs: need at least 2 signatures");
  std::vector<std::uint32_t> all(signatures.size());
  std::iota(all.begin(), all.end(), 0u);
  return make_pairs_subset(signatures, all, mode, seed);
}

std::vector<SignaturePair> orient_randomly(std::span<const SignaturePair> pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SignaturePair> out(pairs.begin(), pairs.end());
  for (auto& p : out) {
    if (rng() & 1u) std::swap(p.first, p.second);
  }
  return out;
}

void write_pair_file(const std::filesystem::path& path, std::span<const StoredPair> pairs) {
  io::ByteWriter w;
  w.bytes().reserve(16 + pairs.size() * kPairRecordSize);
  w.put_string({kPairMagic, 4});
  w.put<std::uint32_t>(kPairVersion);
  w.put<std::uint64_t>(pairs.size());
  for (const auto& p : pairs) {
    w.put<std::uint64_t>(p.sig1_id);
    w.put<std::uint64_t>(p.sig2_id);
    w.put<std::uint8_t>(p.label);
  }
  io::write_file_atomic(path, w.bytes());
}

std::vector<StoredPair> read_pair_file(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  if (r.get_string(4) != std::string_view(kPairMagic, 4)) throw StoreError(path.string() + ": bad magic");
  if (r.get<std::uint32_t>() != kPairVersion) throw StoreError(path.string() + ": unsupported version");
  const auto count = r.get<std::uint64_t>();
  if (count != r.remaining() / kPairRecordSize || r.remaining() % kPairRecordSize != 0) {
    throw StoreError(path.string() + ": record count does not match file size");
  }
  std::vector<StoredPair> out(count);
  for (auto& p : out) {
    p.sig1_id = r.get<std::uint64_t>();
    p.sig2_id = r.get<std::uint64_t>();
    p.label = r.get<std::uint8_t>();
    if (p.label > 1) throw StoreError(path.string() + ": label out of range");
  }
  return out;
}

}  // namespace camfp
