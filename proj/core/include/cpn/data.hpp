#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpn/dic.hpp"
#include "cpn/image.hpp"
#include "cpn/tensor.hpp"

/// Dataset ingestion, preprocessing, augmentation and noise injection.
namespace cpn::data {

struct FramePair {
  GrayImage reference;
  GrayImage deformed;
  std::optional<dic::CrackEdgeMap> ground_truth;
  double timestamp_s = 0.0;
  double mm_per_px = 0.0;

  /// Throws DataError when the images differ in size or the timestamp is negative.
  void validate() const;
};

enum class Split { kTrain, kVal, kTest, kNone };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// One manifest line. Paths are kept verbatim; relative paths resolve
/// against the manifest's directory.
struct ManifestEntry {
  std::string sequence_id;
  int frame_index = 0;
  std::string reference_path;
  std::string deformed_path;
  std::optional<std::string> ground_truth_path;
  double timestamp_s = 0.0;
  double mm_per_px = 0.0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::kNone;
  std::vector<std::pair<std::string, double>> frame_rates;  // per sequence, frames per second
  std::filesystem::path base_dir;                           // not serialised

  std::filesystem::path resolve(const std::string& path) const;
  std::optional<double> frame_rate(const std::string& sequence_id) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.entries == b.entries && a.split == b.split && a.frame_rates == b.frame_rates;
  }
};

/// Text format: optional "# split: NAME" and "# fps: SEQ RATE" directives, then
/// "sequence_id, frame_index, ref_path, def_path, gt_path|-, timestamp_s, mm_per_px".
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Checks that referenced files exist and that sequences are time-ordered.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Seeded frame-level split. Counts round to nearest; the last part takes the remainder.
std::vector<DatasetManifest> split_manifest(const DatasetManifest& manifest, std::span<const double> fractions,
                                            std::uint64_t seed);

FramePair load_pair(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Min-pool by the largest integer factor that keeps both sides >= target, then centre-crop.
GrayImage preprocess(const GrayImage& raw, std::size_t target = 1024);

struct AugmentationConfig {
  double flip_probability = 0.5;
  std::pair<double, double> brightness{0.95, 1.05};
  std::pair<double, double> contrast{0.95, 1.05};
  std::pair<double, double> saturation{0.95, 1.05};
  std::pair<double, double> hue{-0.05, 0.05};
  std::uint64_t seed = 0;

  void validate() const;
};

/// One sampled transform set, applied identically to both images of a pair.
struct AugmentationParams {
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;

  bool photometric_identity() const;
};

AugmentationParams sample_augmentation(const AugmentationConfig& cfg, std::mt19937_64& rng);

/// Samples with `cfg.seed` and applies the result.
FramePair augment(const FramePair& pair, const AugmentationConfig& cfg);
FramePair augment(const FramePair& pair, const AugmentationParams& params);

/// Gaussian noise N(0, sigma^2) per pixel, rounded and clamped to [0, 255].
GrayImage inject_noise(const GrayImage& image, double sigma, std::uint64_t seed);

/// Network-ready sample: images as 3 x H x W in [0, 1] (gray replicated),
/// optional true flow 2 x H x W.
struct Sample {
  TensorF reference;
  TensorF deformed;
  std::optional<dic::CrackEdgeMap> ground_truth;
  std::optional<TensorF> flow;
};

TensorF to_tensor(const GrayImage& image);
Sample to_sample(const FramePair& pair);
/// Flip mirrors images, labels and flow (negating u); photometric changes touch images only.
void apply_augmentation(Sample& sample, const AugmentationParams& params);
/// Photometric transform of one 3 x H x W image in place.
void apply_photometric(TensorF& image, const AugmentationParams& params);

/// Stacks 3 x H x W tensors into N x 3 x H x W.
TensorF stack_batch(std::span<const TensorF* const> images);

ImageF to_float(const GrayImage& image);

/// Dense true-flow sidecar stored next to a deformed image.
std::filesystem::path flow_sidecar_path(const std::filesystem::path& deformed);
/// Loads a pair as a sample, attaching the flow sidecar when one exists.
Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace cpn::data
