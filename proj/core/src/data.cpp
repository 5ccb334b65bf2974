#include "cpn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "cpn/error.hpp"

namespace cpn::data {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + ": '" + s + "'");
  }
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void FramePair::validate() const {
  if (reference.width != deformed.width || reference.height != deformed.height)
    throw DataError("reference and deformed images differ in size");
  if (reference.empty()) throw DataError("frame pair has empty images");
  if (timestamp_s < 0) throw DataError("frame pair timestamp is negative");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kNone: return "none";
  }
  return "none";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "none") return Split::kNone;
  throw DataError("unknown split tag '" + std::string(name) + "'");
}

std::filesystem::path DatasetManifest::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

std::optional<double> DatasetManifest::frame_rate(const std::string& sequence_id) const {
  for (const auto& [id, fps] : frame_rates)
    if (id == sequence_id) return fps;
  return std::nullopt;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << "# split: " << split_name(manifest.split) << "\n";
  for (const auto& [id, fps] : manifest.frame_rates) out << "# fps: " << id << " " << format_double(fps) << "\n";
  for (const auto& e : manifest.entries) {
    out << e.sequence_id << ", " << e.frame_index << ", " << e.reference_path << ", " << e.deformed_path << ", "
        << e.ground_truth_path.value_or("-") << ", " << format_double(e.timestamp_s) << ", "
        << format_double(e.mm_per_px) << "\n";
  }
  if (!out) throw DataError("failed writing manifest: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      std::istringstream ss(t.substr(1));
      std::string key;
      ss >> key;
      if (key == "split:") {
        std::string name;
        ss >> name;
        m.split = parse_split(name);
      } else if (key == "fps:") {
        std::string id, rate;
        ss >> id >> rate;
        m.frame_rates.emplace_back(id, parse_double(rate, "frame rate"));
      }
      continue;
    }
    const auto f = split_fields(t);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 7) throw DataError("manifest line " + where + " has " + std::to_string(f.size()) + " fields, expected 7");
    ManifestEntry e;
    e.sequence_id = f[0];
    e.frame_index = static_cast<int>(parse_double(f[1], "frame index at " + where));
    e.reference_path = f[2];
    e.deformed_path = f[3];
    if (f[4] != "-") e.ground_truth_path = f[4];
    e.timestamp_s = parse_double(f[5], "timestamp at " + where);
    e.mm_per_px = parse_double(f[6], "resolution at " + where);
    if (e.timestamp_s < 0) throw DataError("negative timestamp at " + where);
    m.entries.push_back(std::move(e));
  }
  for (const auto& e : m.entries) {
    for (const std::string* p : {&e.reference_path, &e.deformed_path}) {
      if (!std::filesystem::exists(m.resolve(*p))) throw DataError("manifest references a missing file: " + m.resolve(*p).string());
    }
    if (e.ground_truth_path && !std::filesystem::exists(m.resolve(*e.ground_truth_path)))
      throw DataError("manifest references a missing file: " + m.resolve(*e.ground_truth_path).string());
  }
  // Sequences must be time-ordered by frame index.
  std::map<std::string, std::vector<std::pair<int, double>>> seqs;
  for (const auto& e : m.entries) seqs[e.sequence_id].emplace_back(e.frame_index, e.timestamp_s);
  for (auto& [id, frames] : seqs) {
    std::sort(frames.begin(), frames.end());
    for (std::size_t i = 1; i < frames.size(); ++i)
      if (frames[i].second <= frames[i - 1].second)
        throw DataError("sequence " + id + " is not time-ordered at frame " + std::to_string(frames[i].first));
  }
  return m;
}

std::vector<DatasetManifest> split_manifest(const DatasetManifest& manifest, std::span<const double> fractions,
                                            std::uint64_t seed) {
  if (fractions.empty()) throw ShapeError("split needs at least one fraction");
  double total = 0;
  for (double f : fractions) {
    if (f < 0) throw ShapeError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ShapeError("split fractions must sum to 1");

  const std::size_t n = manifest.entries.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with a plain modulus keeps the permutation identical across standard libraries.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  std::vector<DatasetManifest> parts(fractions.size());
  std::size_t pos = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    std::size_t count = p + 1 == fractions.size()
                            ? n - pos
                            : std::min(n - pos, static_cast<std::size_t>(std::llround(fractions[p] * static_cast<double>(n))));
    parts[p].base_dir = manifest.base_dir;
    parts[p].frame_rates = manifest.frame_rates;
    std::vector<std::size_t> chosen(order.begin() + static_cast<long>(pos), order.begin() + static_cast<long>(pos + count));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) parts[p].entries.push_back(manifest.entries[i]);
    pos += count;
  }
  if (parts.size() >= 1) parts[0].split = Split::kTrain;
  if (parts.size() >= 2) parts[1].split = Split::kVal;
  if (parts.size() >= 3) parts[2].split = Split::kTest;
  return parts;
}

FramePair load_pair(const DatasetManifest& manifest, const ManifestEntry& entry) {
  FramePair p;
  p.reference = read_pgm(manifest.resolve(entry.reference_path));
  p.deformed = read_pgm(manifest.resolve(entry.deformed_path));
  if (entry.ground_truth_path) p.ground_truth = dic::read_edge_map(manifest.resolve(*entry.ground_truth_path));
  p.timestamp_s = entry.timestamp_s;
  p.mm_per_px = entry.mm_per_px;
  if (p.ground_truth) p.ground_truth->mm_per_px = entry.mm_per_px * static_cast<double>(p.reference.width) /
                                                  static_cast<double>(p.ground_truth->width);
  p.validate();
  return p;
}

GrayImage preprocess(const GrayImage& raw, std::size_t target) {
  if (target == 0) throw ShapeError("preprocess target must be positive");
  if (raw.width < target || raw.height < target)
    throw DataError("image " + std::to_string(raw.width) + "x" + std::to_string(raw.height) + " is smaller than " +
                    std::to_string(target) + " in at least one dimension");
  const std::size_t factor = std::min(raw.width / target, raw.height / target);
  const std::size_t pw = raw.width / factor, ph = raw.height / factor;
  GrayImage pooled(pw, ph);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x) {
      std::uint8_t m = 255;
      for (std::size_t j = 0; j < factor; ++j)
        for (std::size_t i = 0; i < factor; ++i) m = std::min(m, raw.at(x * factor + i, y * factor + j));
      pooled.at(x, y) = m;
    }
  const std::size_t ox = (pw - target) / 2, oy = (ph - target) / 2;
  GrayImage out(target, target);
  for (std::size_t y = 0; y < target; ++y)
    for (std::size_t x = 0; x < target; ++x) out.at(x, y) = pooled.at(ox + x, oy + y);
  return out;
}

void AugmentationConfig::validate() const {
  auto check = [](std::pair<double, double> r, double lo, double hi, const char* what) {
    if (r.first > r.second || r.first < lo || r.second > hi)
      throw ShapeError(std::string(what) + " range must lie within [" + format_double(lo) + ", " + format_double(hi) + "]");
  };
  check(brightness, 0.9, 1.1, "brightness");
  check(contrast, 0.9, 1.1, "contrast");
  check(saturation, 0.9, 1.1, "saturation");
  check(hue, -0.1, 0.1, "hue");
  if (flip_probability < 0 || flip_probability > 1) throw ShapeError("flip probability must lie within [0, 1]");
}

bool AugmentationParams::photometric_identity() const {
  return brightness == 1.0 && contrast == 1.0 && saturation == 1.0 && hue == 0.0;
}

AugmentationParams sample_augmentation(const AugmentationConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  auto uniform = [&](std::pair<double, double> r) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return r.first + (r.second - r.first) * u;
  };
  AugmentationParams p;
  p.flip = static_cast<double>(rng() >> 11) * 0x1.0p-53 < cfg.flip_probability;
  p.brightness = uniform(cfg.brightness);
  p.contrast = uniform(cfg.contrast);
  p.saturation = uniform(cfg.saturation);
  p.hue = uniform(cfg.hue);
  return p;
}

namespace {

template <typename P>
void mirror_rows(std::vector<P>& pixels, std::size_t width, std::size_t height) {
  for (std::size_t y = 0; y < height; ++y) std::reverse(pixels.begin() + static_cast<long>(y * width),
                                                        pixels.begin() + static_cast<long>((y + 1) * width));
}

GrayImage from_tensor(const TensorF& t) {
  const std::size_t h = t.dim(1), w = t.dim(2), plane = h * w;
  GrayImage img(w, h);
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = (static_cast<double>(t[i]) + t[plane + i] + t[2 * plane + i]) / 3.0;
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
  }
  return img;
}

}  // namespace

FramePair augment(const FramePair& pair, const AugmentationConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return augment(pair, sample_augmentation(cfg, rng));
}

FramePair augment(const FramePair& pair, const AugmentationParams& params) {
  FramePair out = pair;
  if (!params.photometric_identity()) {
    TensorF r = to_tensor(pair.reference), d = to_tensor(pair.deformed);
    apply_photometric(r, params);
    apply_photometric(d, params);
    out.reference = from_tensor(r);
    out.deformed = from_tensor(d);
  }
  if (params.flip) {
    mirror_rows(out.reference.pixels, out.reference.width, out.reference.height);
    mirror_rows(out.deformed.pixels, out.deformed.width, out.deformed.height);
    if (out.ground_truth) mirror_rows(out.ground_truth->pixels, out.ground_truth->width, out.ground_truth->height);
  }
  return out;
}

GrayImage inject_noise(const GrayImage& image, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw ShapeError("noise sigma must be non-negative");
  if (sigma == 0) return image;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  GrayImage out = image;
  for (auto& p : out.pixels) p = static_cast<std::uint8_t>(std::clamp(std::lround(p + noise(rng)), 0L, 255L));
  return out;
}

TensorF to_tensor(const GrayImage& image) {
  const std::size_t plane = image.width * image.height;
  TensorF t(Shape{3, image.height, image.width});
  for (std::size_t i = 0; i < plane; ++i) {
    const float v = static_cast<float>(image.pixels[i]) / 255.0f;
    t[i] = v;
    t[plane + i] = v;
    t[2 * plane + i] = v;
  }
  return t;
}

ImageF to_float(const GrayImage& image) {
  ImageF out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) out.pixels[i] = image.pixels[i];
  return out;
}

Sample to_sample(const FramePair& pair) {
  pair.validate();
  Sample s;
  s.reference = to_tensor(pair.reference);
  s.deformed = to_tensor(pair.deformed);
  s.ground_truth = pair.ground_truth;
  return s;
}

void apply_photometric(TensorF& image, const AugmentationParams& p) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("photometric transform expects 3 x H x W, got " + image.shape().str());
  if (p.photometric_identity()) return;
  const std::size_t plane = image.dim(1) * image.dim(2);
  float* r = image.ptr();
  float* g = r + plane;
  float* b = g + plane;
  auto luma = [](double rr, double gg, double bb) { return 0.299 * rr + 0.587 * gg + 0.114 * bb; };
  // Brightness, contrast (about the mean luma), saturation (about per-pixel luma), then hue.
  double mean = 0;
  for (std::size_t i = 0; i < plane; ++i) mean += luma(r[i], g[i], b[i]) * p.brightness;
  mean /= static_cast<double>(plane);
  const double angle = 2.0 * std::numbers::pi * p.hue;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t i = 0; i < plane; ++i) {
    double c[3] = {r[i] * p.brightness, g[i] * p.brightness, b[i] * p.brightness};
    for (double& v : c) v = std::clamp(v, 0.0, 1.0);
    for (double& v : c) v = std::clamp((v - mean) * p.contrast + mean, 0.0, 1.0);
    const double y = luma(c[0], c[1], c[2]);
    for (double& v : c) v = std::clamp(y + p.saturation * (v - y), 0.0, 1.0);
    if (p.hue != 0.0) {
      // Rotate chroma in YIQ space.
      const double yy = luma(c[0], c[1], c[2]);
      const double ii = 0.596 * c[0] - 0.274 * c[1] - 0.322 * c[2];
      const double qq = 0.211 * c[0] - 0.523 * c[1] + 0.312 * c[2];
      const double i2 = ca * ii - sa * qq, q2 = sa * ii + ca * qq;
      c[0] = yy + 0.956 * i2 + 0.621 * q2;
      c[1] = yy - 0.272 * i2 - 0.647 * q2;
      c[2] = yy - 1.106 * i2 + 1.703 * q2;
      for (double& v : c) v = std::clamp(v, 0.0, 1.0);
    }
    r[i] = static_cast<float>(c[0]);
    g[i] = static_cast<float>(c[1]);
    b[i] = static_cast<float>(c[2]);
  }
}

void apply_augmentation(Sample& s, const AugmentationParams& p) {
  apply_photometric(s.reference, p);
  apply_photometric(s.deformed, p);
  if (!p.flip) return;
  auto flip = [](TensorF& t) {
    const std::size_t planes = t.size() / (t.dim(t.rank() - 1) * t.dim(t.rank() - 2));
    const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
    for (std::size_t c = 0; c < planes; ++c)
      for (std::size_t y = 0; y < h; ++y) {
        float* row = t.ptr() + (c * h + y) * w;
        std::reverse(row, row + w);
      }
  };
  flip(s.reference);
  flip(s.deformed);
  if (s.ground_truth) mirror_rows(s.ground_truth->pixels, s.ground_truth->width, s.ground_truth->height);
  if (s.flow) {
    flip(*s.flow);
    const std::size_t plane = s.flow->dim(1) * s.flow->dim(2);
    for (std::size_t i = 0; i < plane; ++i) (*s.flow)[i] = -(*s.flow)[i];
  }
}

TensorF stack_batch(std::span<const TensorF* const> images) {
  if (images.empty()) throw ShapeError("cannot stack an empty batch");
  const Shape& s = images[0]->shape();
  if (s.rank() != 3) throw ShapeError("stack_batch expects C x H x W tensors, got " + s.str());
  TensorF out(Shape{images.size(), s[0], s[1], s[2]});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->shape() != s) throw ShapeError("batch members differ in shape");
    std::copy(images[n]->ptr(), images[n]->ptr() + images[n]->size(), out.ptr() + n * s.numel());
  }
  return out;
}

std::filesystem::path flow_sidecar_path(const std::filesystem::path& deformed) {
  std::filesystem::path p = deformed;
  p += ".flow";
  return p;
}

Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  Sample s = to_sample(load_pair(manifest, entry));
  const auto sidecar = flow_sidecar_path(manifest.resolve(entry.deformed_path));
  if (std::filesystem::exists(sidecar)) {
    std::size_t w = 0, h = 0;
    auto planes = read_float_planes(sidecar, 2, &w, &h);
    if (w != s.reference.dim(2) || h != s.reference.dim(1))
      throw DataError("flow sidecar size does not match its images: " + sidecar.string());
    TensorF flow(Shape{2, h, w});
    std::copy(planes[0].begin(), planes[0].end(), flow.ptr());
    std::copy(planes[1].begin(), planes[1].end(), flow.ptr() + w * h);
    s.flow = std::move(flow);
  }
  return s;
}

}  // namespace cpn::data
