#include "camfprint/signature_store.hpp"

#include <cmath>
#include <cstring>
#include <mutex>

#include "camfprint/binary_io.hpp"

namespace camfp {

namespace {
constexpr char kMagic[4] = {'S', 'I', 'G', 'S'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<std::uint8_t> encode(const std::vector<StoreRecord>& records) {
  io::ByteWriter w;
  w.bytes().reserve(kHeaderBytes + records.size() * SignatureStore::kRecordBytes);
  w.put_string({kMagic, 4});
  w.put<std::uint32_t>(SignatureStore::kVersion);
  w.put<std::uint64_t>(records.size());
  std::uint64_t offset = 0;
  for (const auto& r : records) {
    w.put<std::uint64_t>(r.sig_id);
    w.put_bytes(r.extractor_version);
    w.put_fixed(r.device_id, SignatureStore::kDeviceIdBytes);
    w.put<std::uint64_t>(offset);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.image_path.size()));
    w.put_array<float>(r.values);
    offset += r.image_path.size();
  }
  for (const auto& r : records) w.put_string(r.image_path);
  return std::move(w.bytes());
}
}  // namespace

SignatureStore::SignatureStore(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(*path_)) {
    records_ = deserialize(io::read_file(*path_), path_->string());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (records_[i].sig_id != i + 1) throw StoreError(path_->string() + ": non-sequential sig_id");
      if (!index_.emplace(std::pair(records_[i].image_path, records_[i].extractor_version), i).second) {
        throw StoreError(path_->string() + ": duplicate key for " + records_[i].image_path);
      }
    }
  }
}

SignatureStore::~SignatureStore() {
  try {
    if (dirty_ && path_) flush();
  } catch (...) {
  }
}

std::uint64_t SignatureStore::put(const StoreRecord& record) {
  if (record.values.size() != kValues) {
    throw StoreError("store: signature must have " + std::to_string(kValues) + " values, got " +
                     std::to_string(record.values.size()));
  }
  for (float v : record.values) {
    if (!std::isfinite(v)) throw StoreError("store: non-finite signature value for " + record.image_path);
  }
  if (record.device_id.empty() || record.device_id.size() > kDeviceIdBytes) {
    throw StoreError("store: device_id must be 1.." + std::to_string(kDeviceIdBytes) + " bytes");
  }

  std::unique_lock lock(mutex_);
  auto key = std::pair(record.image_path, record.extractor_version);
  if (auto it = index_.find(key); it != index_.end()) {
    const auto& existing = records_[it->second];
    if (existing.device_id != record.device_id || !same_bits(existing.values, record.values)) {
      throw StoreError("store: conflicting signature for " + record.image_path + " under extractor " +
                       to_hex(record.extractor_version));
    }
    return existing.sig_id;
  }
  StoreRecord r = record;
  r.sig_id = records_.size() + 1;
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(r));
  dirty_ = true;
  return records_.back().sig_id;
}

std::optional<StoreRecord> SignatureStore::get(std::uint64_t sig_id) const {
  std::shared_lock lock(mutex_);
  if (sig_id == 0 || sig_id > records_.size()) return std::nullopt;
  return records_[sig_id - 1];
}

std::optional<std::uint64_t> SignatureStore::find(const std::string& image_path, const Digest& extractor_version) const {
  std::shared_lock lock(mutex_);
  auto it = index_.find(std::pair(image_path, extractor_version));
  if (it == index_.end()) return std::nullopt;
  return records_[it->second].sig_id;
}

std::vector<StoreRecord> SignatureStore::get_by_device(const std::string& device_id,
                                                       const Digest& extractor_version) const {
  std::shared_lock lock(mutex_);
  std::vector<StoreRecord> out;
  for (const auto& r : records_) {
    if (r.device_id == device_id && r.extractor_version == extractor_version) out.push_back(r);
  }
  return out;
}

std::vector<StoreRecord> SignatureStore::get_by_version(const Digest& extractor_version) const {
  std::shared_lock lock(mutex_);
  std::vector<StoreRecord> out;
  for (const auto& r : records_) {
    if (r.extractor_version == extractor_version) out.push_back(r);
  }
  return out;
}

std::size_t SignatureStore::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

bool SignatureStore::dirty() const {
  std::shared_lock lock(mutex_);
  return dirty_;
}

void SignatureStore::flush() {
  if (!path_) return;
  std::unique_lock lock(mutex_);
  io::write_file_atomic(*path_, encode(records_));
  dirty_ = false;
}

std::vector<std::uint8_t> SignatureStore::serialize() const {
  std::shared_lock lock(mutex_);
  return encode(records_);
}

std::vector<StoreRecord> SignatureStore::deserialize(std::span<const std::uint8_t> bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  if (r.get_string(4) != std::string_view(kMagic, 4)) throw StoreError(context + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw StoreError(context + ": unsupported store version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / kRecordBytes) throw StoreError(context + ": truncated record section");
  const std::size_t strings_at = kHeaderBytes + count * kRecordBytes;
  const std::size_t strings_len = bytes.size() - strings_at;

  std::vector<StoreRecord> out(count);
  for (auto& rec : out) {
    rec.sig_id = r.get<std::uint64_t>();
    auto h = r.get_bytes(32);
    std::copy(h.begin(), h.end(), rec.extractor_version.begin());
    rec.device_id = r.get_fixed(kDeviceIdBytes);
    const auto off = r.get<std::uint64_t>();
    const auto len = r.get<std::uint32_t>();
    if (off > strings_len || len > strings_len - off) throw StoreError(context + ": path outside string table");
    rec.image_path.assign(reinterpret_cast<const char*>(bytes.data() + strings_at + off), len);
    rec.values.resize(kValues);
    r.get_array<float>(rec.values);
  }
  return out;
}

}  // namespace camfp
