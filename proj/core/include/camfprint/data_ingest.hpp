#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "camfprint/image_io.hpp"

namespace camfp {

enum class Split { unassigned, train, val, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view text);

/// A device id is "<model_id>_<instance index>", e.g. "Nikon_D200_1".
struct DeviceName {
  std::string model_id;
  int instance = 0;
};

std::optional<DeviceName> parse_device_id(std::string_view device_id);

/// Dresden naming: <Model>_<InstanceIndex>_<ImageIndex>.<ext>, where the model
/// part may itself contain underscores ("Sony_DSC-T77_1_5012.JPG").
struct DresdenName {
  std::string device_id;
  std::string model_id;
  int instance = 0;
  long long image_index = 0;
};

std::optional<DresdenName> parse_dresden_filename(std::string_view filename);

struct ImageRecord {
  std::string path;
  std::string device_id;
  std::string model_id;
  int width = 0;
  int height = 0;
  Split split = Split::unassigned;
};

struct Manifest {
  std::vector<ImageRecord> records;
  std::vector<std::string> devices;
  std::uint64_t seed = 0;

  /// Records per device, in the order of `devices`.
  std::vector<std::size_t> device_counts() const;
  std::size_t count(Split split) const;
  std::vector<std::size_t> indices(Split split) const;
  /// Index of a device in `devices`, or -1.
  int device_index(std::string_view device_id) const;
  /// Throws DataError if a record names an unknown device or devices repeat.
  void validate() const;
};

/// UTF-8 JSON with fixed key order {seed, devices, records[...]}.
std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(std::string_view json);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

struct ManifestBuild {
  Manifest manifest;
  std::vector<std::string> skipped_unparseable;
  std::vector<std::string> skipped_undecodable;
};

/// Scans `root` recursively for images named with the Dresden convention.
/// Unparseable names and undecodable files are skipped and tallied.
ManifestBuild build_manifest(const std::filesystem::path& root);

/// Drops devices with fewer than `min_count` records (min_count >= 2).
Manifest filter_min_images(const Manifest& manifest, std::size_t min_count);

/// Per-device stratified split. The train+val pool holds round(train_frac * N)
/// records overall, apportioned to devices by largest remainder so that each
/// device gets floor or ceil of train_frac * n_device (and at least one record
/// on each side). `val_frac` of each device's pool is carved out as validation.
Manifest stratified_split(const Manifest& manifest, double train_frac, std::uint64_t seed,
                          double val_frac = 0.15);

struct SynthConfig {
  int n_devices = 8;
  int images_per_device = 40;
  int height = 64;
  int width = 64;
  /// Multiplicative pixel non-uniformity, relative gain (0.05 = 5%).
  double prnu_strength = 0.15;
  /// Additive fixed-pattern offset, 8-bit intensity units.
  double fpn_strength = 8.0;
  /// Per-frame noise standard deviation relative to full scale.
  double shot_noise_scale = 0.01;
  int scene_pool = 10;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir;

  void validate() const;
};

/// Ground-truth per-device noise fields, height x width x 3, zero mean, unit
/// variance per channel before scaling. Each device colours white Gaussian
/// noise with its own random 3x3 kernel, so fields differ in texture as well
/// as in value.
struct SensorFields {
  int width = 0;
  int height = 0;
  std::vector<double> prnu;  // scaled by prnu_strength
  std::vector<double> fpn;   // scaled by fpn_strength
};

SensorFields make_sensor_fields(const SynthConfig& cfg, int device);

/// Smooth scene radiance in [0,1], height x width x 3. Shared by all devices.
std::vector<double> make_scene(const SynthConfig& cfg, int scene);

/// One exposure before quantisation: 255*scene*(1+K) + D + shot noise.
std::vector<double> expose(const SynthConfig& cfg, const SensorFields& sensor, const std::vector<double>& scene,
                           std::mt19937_64& shot_rng);

RgbImage quantize(const std::vector<double>& intensities, int width, int height);

/// "SynthCam<k>_<i>": devices come in same-model pairs.
std::string synthetic_device_id(int device);

/// Renders the corpus into cfg.output_dir as PNGs and returns its manifest.
Manifest generate_synthetic(const SynthConfig& cfg);

}  // namespace camfp
