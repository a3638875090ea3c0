#include "camfprint/data_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "camfprint/common.hpp"

namespace camfp {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

template <typename Int>
bool parse_int(std::string_view text, Int& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && out >= 0;
}

bool is_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> kExt = {".jpg", ".jpeg", ".png", ".tif", ".tiff", ".bmp"};
  return kExt.contains(ext);
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

Split split_from_string(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  if (text == "unassigned") return Split::unassigned;
  throw DataError("unknown split '" + std::string(text) + "'");
}

std::optional<DeviceName> parse_device_id(std::string_view device_id) {
  auto pos = device_id.rfind('_');
  if (pos == std::string_view::npos || pos == 0) return std::nullopt;
  DeviceName name;
  if (!parse_int(device_id.substr(pos + 1), name.instance)) return std::nullopt;
  name.model_id = std::string(device_id.substr(0, pos));
  return name;
}

std::optional<DresdenName> parse_dresden_filename(std::string_view filename) {
  auto dot = filename.rfind('.');
  std::string_view stem = dot == std::string_view::npos ? filename : filename.substr(0, dot);
  auto last = stem.rfind('_');
  if (last == std::string_view::npos) return std::nullopt;
  DresdenName out;
  if (!parse_int(stem.substr(last + 1), out.image_index)) return std::nullopt;
  auto device = stem.substr(0, last);
  auto parsed = parse_device_id(device);
  if (!parsed) return std::nullopt;
  out.device_id = std::string(device);
  out.model_id = parsed->model_id;
  out.instance = parsed->instance;
  return out;
}

std::vector<std::size_t> Manifest::device_counts() const {
  std::vector<std::size_t> counts(devices.size(), 0);
  for (const auto& r : records) {
    int d = device_index(r.device_id);
    if (d >= 0) ++counts[static_cast<std::size_t>(d)];
  }
  return counts;
}

std::size_t Manifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const ImageRecord& r) { return r.split == split; }));
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

int Manifest::device_index(std::string_view device_id) const {
  auto it = std::find(devices.begin(), devices.end(), device_id);
  return it == devices.end() ? -1 : static_cast<int>(it - devices.begin());
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& d : devices) {
    if (d.empty()) throw DataError("manifest: empty device id");
    if (!seen.insert(d).second) throw DataError("manifest: duplicate device " + d);
  }
  for (const auto& r : records) {
    if (!seen.contains(r.device_id)) throw DataError("manifest: record " + r.path + " has unknown device " + r.device_id);
    if (!parse_device_id(r.device_id)) throw DataError("manifest: malformed device id " + r.device_id);
  }
}

std::string manifest_to_json(const Manifest& manifest) {
  ojson j;
  j["seed"] = manifest.seed;
  j["devices"] = manifest.devices;
  ojson records = ojson::array();
  for (const auto& r : manifest.records) {
    ojson o;
    o["path"] = r.path;
    o["device_id"] = r.device_id;
    o["model_id"] = r.model_id;
    o["width"] = r.width;
    o["height"] = r.height;
    o["split"] = std::string(to_string(r.split));
    records.push_back(std::move(o));
  }
  j["records"] = std::move(records);
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view json) {
  Manifest m;
  try {
    auto j = ojson::parse(json);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.devices = j.at("devices").get<std::vector<std::string>>();
    for (const auto& o : j.at("records")) {
      ImageRecord r;
      r.path = o.at("path").get<std::string>();
      r.device_id = o.at("device_id").get<std::string>();
      r.model_id = o.at("model_id").get<std::string>();
      r.width = o.at("width").get<int>();
      r.height = o.at("height").get<int>();
      r.split = split_from_string(o.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: malformed JSON: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << manifest_to_json(manifest);
  if (!out) throw DataError("cannot write manifest " + path.string());
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

ManifestBuild build_manifest(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("image root does not exist: " + root.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied)) {
    if (entry.is_regular_file() && is_image_extension(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  ManifestBuild out;
  std::set<std::string> devices;
  for (const auto& file : files) {
    auto name = parse_dresden_filename(file.filename().string());
    if (!name) {
      out.skipped_unparseable.push_back(file.string());
      continue;
    }
    RgbImage img;
    try {
      img = load_rgb(file);
    } catch (const DataError&) {
      out.skipped_undecodable.push_back(file.string());
      continue;
    }
    ImageRecord r;
    r.path = file.string();
    r.device_id = name->device_id;
    r.model_id = name->model_id;
    r.width = img.width;
    r.height = img.height;
    devices.insert(r.device_id);
    out.manifest.records.push_back(std::move(r));
  }
  if (out.manifest.records.empty()) throw DataError("no images found under " + root.string());
  out.manifest.devices.assign(devices.begin(), devices.end());
  return out;
}

Manifest filter_min_images(const Manifest& manifest, std::size_t min_count) {
  if (min_count < 2) throw ConfigError("filter_min_images: min_count must be >= 2");
  auto counts = manifest.device_counts();
  Manifest out;
  out.seed = manifest.seed;
  std::set<std::string> kept;
  for (std::size_t d = 0; d < manifest.devices.size(); ++d) {
    if (counts[d] >= min_count) {
      out.devices.push_back(manifest.devices[d]);
      kept.insert(manifest.devices[d]);
    }
  }
  for (const auto& r : manifest.records) {
    if (kept.contains(r.device_id)) out.records.push_back(r);
  }
  if (out.devices.size() < 2) {
    throw DataError("insufficient devices: " + std::to_string(out.devices.size()) + " with >= " +
                    std::to_string(min_count) + " images");
  }
  return out;
}

Manifest stratified_split(const Manifest& manifest, double train_frac, std::uint64_t seed, double val_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("stratified_split: train_frac must be in (0,1)");
  if (!(val_frac >= 0.0 && val_frac < 1.0)) throw ConfigError("stratified_split: val_frac must be in [0,1)");
  manifest.validate();

  const std::size_t n_dev = manifest.devices.size();
  std::vector<std::vector<std::size_t>> members(n_dev);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    members[static_cast<std::size_t>(manifest.device_index(manifest.records[i].device_id))].push_back(i);
  }

  // Largest-remainder apportionment of round(train_frac * N) across devices.
  std::vector<std::size_t> pool(n_dev);
  std::vector<double> remainder(n_dev);
  long long assigned = 0;
  for (std::size_t d = 0; d < n_dev; ++d) {
    const std::size_t n = members[d].size();
    if (n < 2) {
      throw DataError("stratified_split: device " + manifest.devices[d] + " has " + std::to_string(n) +
                      " image(s); need at least one for each side");
    }
    const double q = train_frac * static_cast<double>(n);
    pool[d] = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(q)), 1, n - 1);
    remainder[d] = q - static_cast<double>(pool[d]);
    assigned += static_cast<long long>(pool[d]);
  }
  const auto target = static_cast<long long>(std::floor(train_frac * static_cast<double>(manifest.records.size()) + 0.5));
  std::vector<std::size_t> order(n_dev);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < target && k < n_dev; ++k) {
    const std::size_t d = order[k];
    if (remainder[d] > 0.0 && pool[d] + 1 <= members[d].size() - 1) {
      ++pool[d];
      ++assigned;
    }
  }
  for (std::size_t k = n_dev; assigned > target && k-- > 0;) {
    const std::size_t d = order[k];
    if (remainder[d] < 0.0 && pool[d] > 1) {
      --pool[d];
      --assigned;
    }
  }

  Manifest out = manifest;
  out.seed = seed;
  for (std::size_t d = 0; d < n_dev; ++d) {
    auto idx = members[d];
    std::mt19937_64 rng(derive_seed(seed, "split/" + manifest.devices[d]));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_pool = pool[d];
    std::size_t n_val = 0;
    if (n_pool >= 2 && val_frac > 0.0) {
      n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n_pool) + 0.5));
      n_val = std::clamp<std::size_t>(n_val, 1, n_pool - 1);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Split s = k < n_val ? Split::val : (k < n_pool ? Split::train : Split::test);
      out.records[idx[k]].split = s;
    }
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_devices < 2) throw ConfigError("synthetic: n_devices must be >= 2");
  if (images_per_device < 2) throw ConfigError("synthetic: images_per_device must be >= 2");
  if (height < 1 || width < 1) throw ConfigError("synthetic: image size must be positive");
  if (prnu_strength < 0 || fpn_strength < 0 || shot_noise_scale < 0) {
    throw ConfigError("synthetic: noise strengths must be non-negative");
  }
  if (scene_pool < 1) throw ConfigError("synthetic: scene_pool must be >= 1");
}

namespace {

// White Gaussian noise coloured by a per-channel 3x3 kernel (wrap-around
// borders), then standardised to zero mean and unit variance per channel.
std::vector<double> coloured_field(int width, int height, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(width) * height * 3;
  std::vector<double> white(n);
  for (auto& v : white) v = normal(rng);
  std::array<std::array<double, 9>, 3> kernel{};
  for (auto& k : kernel) {
    for (auto& v : k) v = normal(rng);
  }
  std::vector<double> field(n, 0.0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = (y + dy + height) % height;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = (x + dx + width) % width;
            acc += kernel[c][(dy + 1) * 3 + (dx + 1)] * white[(static_cast<std::size_t>(yy) * width + xx) * 3 + c];
          }
        }
        field[(static_cast<std::size_t>(y) * width + x) * 3 + c] = acc;
      }
    }
  }
  const std::size_t per = static_cast<std::size_t>(width) * height;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t p = 0; p < per; ++p) mean += field[p * 3 + c];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t p = 0; p < per; ++p) var += (field[p * 3 + c] - mean) * (field[p * 3 + c] - mean);
    const double sd = std::sqrt(var / static_cast<double>(per));
    for (std::size_t p = 0; p < per; ++p) field[p * 3 + c] = sd > 0 ? (field[p * 3 + c] - mean) / sd : 0.0;
  }
  return field;
}

}  // namespace

SensorFields make_sensor_fields(const SynthConfig& cfg, int device) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "sensor", static_cast<std::uint64_t>(device)));
  SensorFields f;
  f.width = cfg.width;
  f.height = cfg.height;
  f.prnu = coloured_field(cfg.width, cfg.height, rng);
  f.fpn = coloured_field(cfg.width, cfg.height, rng);
  for (auto& v : f.prnu) v *= cfg.prnu_strength;
  for (auto& v : f.fpn) v *= cfg.fpn_strength;
  return f;
}

std::vector<double> make_scene(const SynthConfig& cfg, int scene) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "scene", static_cast<std::uint64_t>(scene)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 3> base{};
  std::array<double, 3> gx{};
  std::array<double, 3> gy{};
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.35 + 0.3 * u(rng);
    gx[c] = 0.2 * (u(rng) - 0.5);
    gy[c] = 0.2 * (u(rng) - 0.5);
  }
  struct Blob {
    double cx, cy, sigma;
    std::array<double, 3> amp;
  };
  std::vector<Blob> blobs(4);
  for (auto& b : blobs) {
    b.cx = u(rng);
    b.cy = u(rng);
    b.sigma = 0.08 + 0.2 * u(rng);
    for (auto& a : b.amp) a = 0.3 * (u(rng) - 0.5);
  }
  std::vector<double> img(static_cast<std::size_t>(cfg.width) * cfg.height * 3);
  for (int y = 0; y < cfg.height; ++y) {
    const double fy = (y + 0.5) / cfg.height;
    for (int x = 0; x < cfg.width; ++x) {
      const double fx = (x + 0.5) / cfg.width;
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + gx[c] * (fx - 0.5) + gy[c] * (fy - 0.5);
        for (const auto& b : blobs) {
          const double d2 = (fx - b.cx) * (fx - b.cx) + (fy - b.cy) * (fy - b.cy);
          v += b.amp[c] * std::exp(-d2 / (2 * b.sigma * b.sigma));
        }
        img[(static_cast<std::size_t>(y) * cfg.width + x) * 3 + c] = std::clamp(v, 0.1, 0.9);
      }
    }
  }
  return img;
}

std::vector<double> expose(const SynthConfig& cfg, const SensorFields& sensor, const std::vector<double>& scene,
                           std::mt19937_64& shot_rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(scene.size());
  const double shot_sd = cfg.shot_noise_scale * 255.0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    double v = 255.0 * scene[i] * (1.0 + sensor.prnu[i]) + sensor.fpn[i];
    if (shot_sd > 0) v += shot_sd * normal(shot_rng);
    out[i] = v;
  }
  return out;
}

RgbImage quantize(const std::vector<double>& intensities, int width, int height) {
  RgbImage img(width, height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(intensities[i], 0.0, 255.0)));
  }
  return img;
}

std::string synthetic_device_id(int device) {
  return "SynthCam" + std::to_string(device / 2) + "_" + std::to_string(device % 2);
}

Manifest generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  if (cfg.output_dir.empty()) throw ConfigError("synthetic: output_dir not set");
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec || !fs::is_directory(cfg.output_dir)) {
    throw DataError("synthetic: cannot create output directory " + cfg.output_dir.string());
  }

  std::vector<std::vector<double>> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.scene_pool));
  for (int s = 0; s < cfg.scene_pool; ++s) scenes.push_back(make_scene(cfg, s));

  Manifest m;
  m.seed = cfg.seed;
  for (int d = 0; d < cfg.n_devices; ++d) {
    const auto sensor = make_sensor_fields(cfg, d);
    const std::string device = synthetic_device_id(d);
    const std::string model = parse_device_id(device)->model_id;
    m.devices.push_back(device);
    for (int k = 0; k < cfg.images_per_device; ++k) {
      std::mt19937_64 shot(
          derive_seed(cfg.seed, "shot", static_cast<std::uint64_t>(d) * 1000003ULL + static_cast<std::uint64_t>(k)));
      const auto& scene = scenes[static_cast<std::size_t>(k % cfg.scene_pool)];
      const auto img = quantize(expose(cfg, sensor, scene, shot), cfg.width, cfg.height);
      const fs::path file = cfg.output_dir / (device + "_" + std::to_string(k) + ".png");
      write_png(file, img);
      ImageRecord r;
      r.path = file.string();
      r.device_id = device;
      r.model_id = model;
      r.width = cfg.width;
      r.height = cfg.height;
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

}  // namespace camfp
