#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cpn/error.hpp"

namespace cpn::cli {

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

struct SynthSection {
  std::size_t width = 512;
  std::size_t height = 512;
  std::size_t sequences = 1;
  std::size_t frames = 8;
  double start_row = 448.0;
  double px_per_frame = 24.0;
  double opening = 4.0;
  double tip_taper = 0.0;
  double taper_half_width = 256.0;
  double translation_x = 0.0;
  double translation_y = 0.0;
  double speckle_density = 0.035;
  /// Random-walk step of the crack path per 16 rows; 0 gives straight cracks.
  double wander = 0.0;
  double fps = 10.0;
  double mm_per_px = 0.05;
  /// 0 uses image width / 8.
  std::size_t label_size = 0;
};

struct LabelSection {
  int subset_size = 17;
  int spacing = 8;
  int search_radius = 6;
  int origin = 12;
  /// 1 matches node-containing sub-rectangles where the full subset straddles the crack.
  int split = 1;
  double threshold = 0.5;
  int temporal_window = 3;
  /// 0 uses image width / 8.
  std::size_t label_size = 0;
};

struct NetSection {
  double channel_scale = 0.25;
  int corr_patch_radius = 0;
  int corr_displacement_radius = 10;
  double leaky_slope = 0.1;
  double flow_scale = 20.0;
};

struct TrainSection {
  int epochs = 40;
  std::size_t batch_size = 6;
  double base_lr = 5e-5;
  int halving_period = 5;
  double weight_decay = 1e-4;
  /// Fraction held out for validation; 0 validates on the training set.
  double val_fraction = 0.15;
  double val_threshold = 0.5;
  double stop_at_val_f1 = 2.0;
  double flip_probability = 0.5;
  double brightness_min = 0.95, brightness_max = 1.05;
  double contrast_min = 0.95, contrast_max = 1.05;
  double saturation_min = 0.95, saturation_max = 1.05;
  double hue_min = -0.05, hue_max = 0.05;
  double gamma = 0.0;
  double lambda = 1.1;
  double flow_loss_weight = 0.0;
};

struct NoiseSection {
  std::vector<double> sigmas{0.0, 5.0, 15.0, 25.0};
};

struct SpeedSection {
  std::string axis = "up";
  double tolerance_px = 1.0;
  double threshold = 0.5;
};

/// Every tunable of every subcommand. Serialises as flat "section.key = value"
/// lines; global keys carry no prefix.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  int verbosity = 1;
  SynthSection synth;
  LabelSection label;
  NetSection net;
  TrainSection train;
  NoiseSection noise;
  SpeedSection speed;

  /// Sets one key from its text value; UsageError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  std::vector<std::string> keys() const;

  /// Applies "key = value" lines; '#' starts a comment.
  void merge_text(std::string_view text, std::string_view origin = "config");
  void merge_file(const std::filesystem::path& path);
  std::string to_text() const;

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_text() == b.to_text(); }
};

/// Independent stream seed for a named pipeline stage.
std::uint64_t stage_seed(std::uint64_t root, std::string_view stage);

/// "%.17g"-exact double formatting used in every config and manifest.
std::string format_number(double v);
std::vector<double> parse_number_list(std::string_view text);

}  // namespace cpn::cli
