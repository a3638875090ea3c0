#include "camfprint/checkpoint.hpp"

#include "camfprint/binary_io.hpp"

namespace camfp {

namespace {
constexpr char kMagic[4] = {'C', 'F', 'P', 'K'};
}

const std::vector<float>& TensorArchive::tensor(const std::string& name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return v;
  }
  throw StoreError("checkpoint: missing tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  io::ByteWriter w;
  w.put_string({kMagic, 4});
  w.put<std::uint32_t>(TensorArchive::kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.meta_json.size()));
  w.put_string(archive.meta_json);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, values] : archive.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_string(name);
    w.put<std::uint64_t>(values.size());
    w.put_array<float>(values);
  }
  const Digest d = sha256(w.bytes());
  w.put_bytes(d);
  return std::move(w.bytes());
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes, const std::string& context) {
  if (bytes.size() < 4 + 4 + 32) throw StoreError(context + ": truncated");
  const auto body = bytes.first(bytes.size() - 32);
  const Digest stored = [&] {
    Digest d{};
    std::copy(bytes.end() - 32, bytes.end(), d.begin());
    return d;
  }();
  if (sha256(body) != stored) throw StoreError(context + ": content hash mismatch (corrupt file)");

  io::ByteReader r(body, context);
  if (r.get_string(4) != std::string_view(kMagic, 4)) throw StoreError(context + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != TensorArchive::kVersion) {
    throw StoreError(context + ": unsupported version " + std::to_string(version));
  }
  TensorArchive a;
  a.meta_json = r.get_string(r.get<std::uint32_t>());
  const auto n = r.get<std::uint32_t>();
  a.tensors.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string(r.get<std::uint32_t>());
    const auto count = r.get<std::uint64_t>();
    if (count > r.remaining() / sizeof(float)) throw StoreError(context + ": truncated tensor " + name);
    std::vector<float> values(count);
    r.get_array<float>(values);
    a.tensors.emplace_back(std::move(name), std::move(values));
  }
  if (r.remaining() != 0) throw StoreError(context + ": trailing bytes");
  return a;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  io::write_file_atomic(path, encode_archive(archive));
}

TensorArchive load_archive(const std::filesystem::path& path) {
  return decode_archive(io::read_file(path), path.string());
}

}  // namespace camfp
