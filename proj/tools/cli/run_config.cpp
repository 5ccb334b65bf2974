#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <type_traits>

namespace cpn::cli {

namespace {

template <typename C, typename F>
void visit_fields(C& c, F&& f) {
  f("seed", c.seed);
  f("out", c.out);
  f("verbosity", c.verbosity);

  auto& s = c.synth;
  f("synth.width", s.width);
  f("synth.height", s.height);
  f("synth.sequences", s.sequences);
  f("synth.frames", s.frames);
  f("synth.start_row", s.start_row);
  f("synth.px_per_frame", s.px_per_frame);
  f("synth.opening", s.opening);
  f("synth.tip_taper", s.tip_taper);
  f("synth.taper_half_width", s.taper_half_width);
  f("synth.translation_x", s.translation_x);
  f("synth.translation_y", s.translation_y);
  f("synth.speckle_density", s.speckle_density);
  f("synth.wander", s.wander);
  f("synth.fps", s.fps);
  f("synth.mm_per_px", s.mm_per_px);
  f("synth.label_size", s.label_size);

  auto& l = c.label;
  f("label.subset_size", l.subset_size);
  f("label.spacing", l.spacing);
  f("label.search_radius", l.search_radius);
  f("label.origin", l.origin);
  f("label.split", l.split);
  f("label.threshold", l.threshold);
  f("label.temporal_window", l.temporal_window);
  f("label.label_size", l.label_size);

  auto& n = c.net;
  f("net.channel_scale", n.channel_scale);
  f("net.corr_patch_radius", n.corr_patch_radius);
  f("net.corr_displacement_radius", n.corr_displacement_radius);
  f("net.leaky_slope", n.leaky_slope);
  f("net.flow_scale", n.flow_scale);

  auto& t = c.train;
  f("train.epochs", t.epochs);
  f("train.batch_size", t.batch_size);
  f("train.base_lr", t.base_lr);
  f("train.halving_period", t.halving_period);
  f("train.weight_decay", t.weight_decay);
  f("train.val_fraction", t.val_fraction);
  f("train.val_threshold", t.val_threshold);
  f("train.stop_at_val_f1", t.stop_at_val_f1);
  f("train.flip_probability", t.flip_probability);
  f("train.brightness_min", t.brightness_min);
  f("train.brightness_max", t.brightness_max);
  f("train.contrast_min", t.contrast_min);
  f("train.contrast_max", t.contrast_max);
  f("train.saturation_min", t.saturation_min);
  f("train.saturation_max", t.saturation_max);
  f("train.hue_min", t.hue_min);
  f("train.hue_max", t.hue_max);
  f("train.gamma", t.gamma);
  f("train.lambda", t.lambda);
  f("train.flow_loss_weight", t.flow_loss_weight);

  f("noise.sigmas", c.noise.sigmas);

  f("speed.axis", c.speed.axis);
  f("speed.tolerance_px", c.speed.tolerance_px);
  f("speed.threshold", c.speed.threshold);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_integer(std::string_view key, std::string_view text) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw UsageError("bad value for " + std::string(key) + ": '" + std::string(text) + "' is not an integer");
  return v;
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw UsageError("bad value for " + std::string(key) + ": '" + std::string(text) + "' is not a number");
  return v;
}

template <typename T>
void assign(std::string_view key, T& field, std::string_view text) {
  if constexpr (std::is_same_v<T, std::string>) {
    field = std::string(text);
  } else if constexpr (std::is_same_v<T, double>) {
    field = parse_double(key, text);
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    field = parse_number_list(text);
  } else {
    field = parse_integer<T>(key, text);
  }
}

template <typename T>
std::string render(const T& field) {
  if constexpr (std::is_same_v<T, std::string>) {
    return field;
  } else if constexpr (std::is_same_v<T, double>) {
    return format_number(field);
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    std::string s;
    for (std::size_t i = 0; i < field.size(); ++i) s += (i ? "," : "") + format_number(field[i]);
    return s;
  } else {
    return std::to_string(field);
  }
}

}  // namespace

std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<double> parse_number_list(std::string_view text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (item.empty()) throw UsageError("empty entry in number list '" + std::string(text) + "'");
    out.push_back(parse_double("list", item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  bool found = false;
  const std::string v = trim(value);
  visit_fields(*this, [&](std::string_view name, auto& field) {
    if (name != key) return;
    assign(name, field, v);
    found = true;
  });
  if (!found) throw UsageError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::get(std::string_view key) const {
  std::optional<std::string> out;
  visit_fields(*this, [&](std::string_view name, const auto& field) {
    if (name == key) out = render(field);
  });
  if (!out) throw UsageError("unknown config key '" + std::string(key) + "'");
  return *out;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  visit_fields(*this, [&](std::string_view name, const auto&) { out.emplace_back(name); });
  return out;
}

void RunConfig::merge_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(std::string_view(line).substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(std::string(origin) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set(trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path.string());
  merge_text(std::string(std::istreambuf_iterator<char>(in), {}), path.string());
}

std::string RunConfig::to_text() const {
  std::string s;
  visit_fields(*this, [&](std::string_view name, const auto& field) {
    s += std::string(name) + " = " + render(field) + "\n";
  });
  return s;
}

std::uint64_t stage_seed(std::uint64_t root, std::string_view stage) {
  // FNV-1a of the stage name, then a splitmix64 finaliser.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stage) h = (h ^ c) * 1099511628211ULL;
  std::uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cpn::cli
