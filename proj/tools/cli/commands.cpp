#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "cpn/data.hpp"
#include "cpn/dic.hpp"
#include "cpn/eval.hpp"
#include "cpn/speed.hpp"
#include "cpn/synth.hpp"
#include "cpn/train.hpp"
#include "cpn/weights_io.hpp"

namespace cpn::cli {

namespace fs = std::filesystem;

void Log::info(const std::string& msg) const {
  if (verbosity_ >= 1) stream_ << msg << "\n";
}

void Log::detail(const std::string& msg) const {
  if (verbosity_ >= 2) stream_ << msg << "\n";
}

namespace {

std::string frame_tag(const std::string& sequence, int frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03d", frame);
  return sequence + buf;
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::proximate(target, base).generic_string();
}

fs::path prepare_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("output directory must not be empty");
  const fs::path out(cfg.out);
  fs::create_directories(out);
  std::ofstream(out / "run_config.txt", std::ios::binary) << cfg.to_text();
  return out;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << body;
  if (!out) throw DataError("failed writing " + path.string());
}

dic::SubsetConfig label_grid(const RunConfig& cfg) {
  dic::SubsetConfig g;
  g.subset_size = cfg.label.subset_size;
  g.spacing = cfg.label.spacing;
  g.search_radius = cfg.label.search_radius;
  g.subpixel = true;
  g.origin = cfg.label.origin;
  g.split = cfg.label.split != 0;
  g.validate();
  return g;
}

std::size_t label_side(std::size_t configured, std::size_t image_width) {
  return configured ? configured : image_width / net::kOutputStride;
}

net::NetworkConfig network_config(const RunConfig& cfg, std::size_t image_width) {
  net::NetworkConfig n;
  n.channel_scale = cfg.net.channel_scale;
  n.corr_patch_radius = cfg.net.corr_patch_radius;
  n.corr_displacement_radius = cfg.net.corr_displacement_radius;
  n.leaky_slope = cfg.net.leaky_slope;
  n.flow_scale = cfg.net.flow_scale;
  n.input_size = image_width;
  n.edge_map_size = image_width / net::kOutputStride;
  n.validate();
  return n;
}

const data::DatasetManifest& require_entries(const data::DatasetManifest& m, const fs::path& path) {
  if (m.entries.empty()) throw DataError("manifest has no entries: " + path.string());
  return m;
}

data::DatasetManifest load_required(const fs::path& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  data::DatasetManifest m = data::load_manifest(path);
  require_entries(m, path);
  return m;
}

fs::path require_path(const fs::path& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string("--") + flag + " is required");
  return p;
}

/// Entry indices grouped by sequence (first-appearance order), each sorted by frame.
std::vector<std::pair<std::string, std::vector<std::size_t>>> sequences_of(const data::DatasetManifest& m) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& id = m.entries[i].sequence_id;
    auto [it, fresh] = slot.emplace(id, out.size());
    if (fresh) out.emplace_back(id, std::vector<std::size_t>{});
    out[it->second].second.push_back(i);
  }
  for (auto& [id, idx] : out)
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return m.entries[a].frame_index < m.entries[b].frame_index; });
  return out;
}

TensorF load_image_tensor(const data::DatasetManifest& m, const std::string& path) {
  return data::to_tensor(read_pgm(m.resolve(path)));
}

std::size_t image_width(const data::DatasetManifest& m) {
  return read_pgm(m.resolve(m.entries.front().reference_path)).width;
}

net::NetworkWeights load_model(const fs::path& path, const net::NetworkConfig& ncfg) {
  return net::load_weights(require_path(path, "weights"), ncfg);
}

/// Predictions for every entry, optionally on noise-injected copies.
std::vector<eval::EdgeProbabilityMap> predict_all(const data::DatasetManifest& m, const net::NetworkConfig& ncfg,
                                                  const net::NetworkWeights& weights, double sigma,
                                                  std::uint64_t noise_seed, const Log& log) {
  std::vector<eval::EdgeProbabilityMap> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    GrayImage ref = read_pgm(m.resolve(e.reference_path));
    GrayImage def = read_pgm(m.resolve(e.deformed_path));
    if (ref.width != ncfg.input_size || def.width != ncfg.input_size || ref.height % net::kInputMultiple != 0)
      throw DataError("image " + e.reference_path + " does not match the network input size " +
                      std::to_string(ncfg.input_size));
    if (sigma > 0) {
      ref = data::inject_noise(ref, sigma, stage_seed(noise_seed, "ref/" + std::to_string(i)));
      def = data::inject_noise(def, sigma, stage_seed(noise_seed, "def/" + std::to_string(i)));
    }
    out.push_back(train::predict_edges(ncfg, weights, data::to_tensor(ref), data::to_tensor(def)));
    log.detail("  predicted " + frame_tag(e.sequence_id, e.frame_index));
  }
  return out;
}

std::vector<dic::CrackEdgeMap> ground_truth_of(const data::DatasetManifest& m) {
  std::vector<dic::CrackEdgeMap> out;
  for (const auto& e : m.entries) {
    if (!e.ground_truth_path)
      throw DataError("manifest entry " + frame_tag(e.sequence_id, e.frame_index) + " has no ground truth");
    out.push_back(dic::read_edge_map(m.resolve(*e.ground_truth_path)));
  }
  return out;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, const Log& log) {
  const fs::path out = prepare_out(cfg);
  fs::create_directories(out / "images");
  fs::create_directories(out / "labels");
  const SynthSection& s = cfg.synth;
  if (s.sequences == 0 || s.frames == 0) throw UsageError("synth needs at least one sequence and one frame");

  data::DatasetManifest manifest;
  manifest.base_dir = out;
  for (std::size_t q = 0; q < s.sequences; ++q) {
    char id_buf[16];
    std::snprintf(id_buf, sizeof id_buf, "s%02zu", q);
    const std::string id = id_buf;
    const std::uint64_t seed = stage_seed(cfg.seed, "synth/" + id);

    data::SyntheticSpec spec;
    spec.width = s.width;
    spec.height = s.height;
    spec.speckle_density = s.speckle_density;
    spec.opening = s.opening;
    spec.tip_taper = s.tip_taper;
    spec.taper_half_width = s.taper_half_width;
    spec.translation_x = s.translation_x;
    spec.translation_y = s.translation_y;
    spec.frames_per_second = s.fps;
    spec.mm_per_px = s.mm_per_px;
    spec.label_grid = label_grid(cfg);
    spec.label_threshold = cfg.label.threshold;
    spec.label_size = label_side(s.label_size, s.width);
    spec.seed = seed;
    std::mt19937_64 rng(seed);
    const double w = static_cast<double>(s.width);
    std::uniform_real_distribution<double> offset(-w / 8, w / 8);
    const double x0 = w / 2 + offset(rng);
    spec.crack_path = s.wander > 0 ? data::wandering_crack(x0, s.width, s.height, s.wander, rng())
                                   : data::vertical_crack(x0, s.height);
    spec.tip_rows = data::constant_speed_tips(s.start_row, s.px_per_frame, s.frames);

    const auto frames = data::synth_generate(spec);
    const fs::path ref = out / "images" / (id + "_ref.pgm");
    write_pgm(ref, frames.front().pair.reference);
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const std::string tag = frame_tag(id, static_cast<int>(f));
      const fs::path def = out / "images" / (tag + "_def.pgm");
      const fs::path gt = out / "labels" / (tag + "_gt.pgm");
      write_pgm(def, frames[f].pair.deformed);
      write_float_planes(data::flow_sidecar_path(def), s.width, s.height, {&frames[f].flow_u, &frames[f].flow_v});
      dic::write_edge_map(gt, *frames[f].pair.ground_truth);
      manifest.entries.push_back({id, static_cast<int>(f), relative_to(ref, out), relative_to(def, out),
                                  relative_to(gt, out), frames[f].pair.timestamp_s, s.mm_per_px});
    }
    manifest.frame_rates.emplace_back(id, s.fps);
    log.info("synth: " + id + " with " + std::to_string(frames.size()) + " frames");
  }
  data::save_manifest(manifest, out / "manifest.txt");
}

void cmd_label(const RunConfig& cfg, const Inputs& in, const Log& log) {
  const data::DatasetManifest m = load_required(in.manifest, "manifest");
  const fs::path out = prepare_out(cfg);
  fs::create_directories(out / "labels");
  fs::create_directories(out / "fields");
  const dic::SubsetConfig grid = label_grid(cfg);

  data::DatasetManifest labelled;
  labelled.base_dir = out;
  labelled.split = m.split;
  labelled.frame_rates = m.frame_rates;
  for (const auto& [id, idx] : sequences_of(m)) {
    std::vector<dic::CrackEdgeMap> raw;
    for (std::size_t i : idx) {
      const auto& e = m.entries[i];
      const GrayImage ref = read_pgm(m.resolve(e.reference_path));
      const GrayImage def = read_pgm(m.resolve(e.deformed_path));
      const auto field = dic::compute_displacement_field(data::to_float(ref), data::to_float(def), grid);
      dic::write_displacement_field(out / "fields" / (frame_tag(id, e.frame_index) + ".txt"), field);
      raw.push_back(dic::label_crack_edges(dic::displacement_gradient(field), field, cfg.label.threshold, ref.width,
                                           ref.height));
      log.detail("  correlated " + frame_tag(id, e.frame_index));
    }
    const auto corrected = dic::temporal_consistency_correct(raw, cfg.label.temporal_window);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& e = m.entries[idx[k]];
      const std::size_t side = label_side(cfg.label.label_size, corrected[k].width);
      const fs::path gt = out / "labels" / (frame_tag(id, e.frame_index) + "_dic.pgm");
      dic::write_edge_map(gt, dic::downsample_label_map(corrected[k], side, side));
      data::ManifestEntry ne = e;
      ne.reference_path = relative_to(m.resolve(e.reference_path), out);
      ne.deformed_path = relative_to(m.resolve(e.deformed_path), out);
      ne.ground_truth_path = relative_to(gt, out);
      labelled.entries.push_back(ne);
    }
    log.info("label: " + id + " with " + std::to_string(idx.size()) + " frames");
  }
  data::save_manifest(labelled, out / "manifest.txt");
}

void cmd_train(const RunConfig& cfg, const Inputs& in, const Log& log) {
  data::DatasetManifest train_m = load_required(in.manifest, "manifest");
  data::DatasetManifest val_m;
  if (!in.val_manifest.empty()) {
    val_m = load_required(in.val_manifest, "val-manifest");
  } else if (cfg.train.val_fraction > 0) {
    const double fr[] = {1.0 - cfg.train.val_fraction, cfg.train.val_fraction};
    auto parts = data::split_manifest(train_m, fr, stage_seed(cfg.seed, "split"));
    if (parts[0].entries.empty() || parts[1].entries.empty())
      throw DataError("validation split of " + std::to_string(train_m.entries.size()) + " frames leaves a part empty");
    train_m = std::move(parts[0]);
    val_m = std::move(parts[1]);
  } else {
    val_m = train_m;
  }
  const fs::path out = prepare_out(cfg);

  const net::NetworkConfig ncfg = network_config(cfg, image_width(train_m));
  auto load = [&](const data::DatasetManifest& m) {
    std::vector<data::Sample> samples;
    for (const auto& e : m.entries) {
      if (!e.ground_truth_path)
        throw DataError("manifest entry " + frame_tag(e.sequence_id, e.frame_index) + " has no ground truth");
      data::Sample s = data::load_sample(m, e);
      if (s.ground_truth->width != ncfg.edge_map_size || s.ground_truth->height * net::kOutputStride != s.reference.dim(1))
        throw DataError("ground truth of " + frame_tag(e.sequence_id, e.frame_index) + " is " +
                        std::to_string(s.ground_truth->width) + "x" + std::to_string(s.ground_truth->height) +
                        " but the network predicts at 1/" + std::to_string(net::kOutputStride) + " of the image");
      samples.push_back(std::move(s));
    }
    return samples;
  };
  const auto train_set = load(train_m);
  const auto val_set = load(val_m);

  const TrainSection& t = cfg.train;
  train::TrainConfig tc;
  tc.batch_size = t.batch_size;
  tc.epochs = t.epochs;
  tc.base_lr = t.base_lr;
  tc.halving_period = t.halving_period;
  tc.val_threshold = t.val_threshold;
  tc.seed = stage_seed(cfg.seed, "train");
  tc.augmentation.flip_probability = t.flip_probability;
  tc.augmentation.brightness = {t.brightness_min, t.brightness_max};
  tc.augmentation.contrast = {t.contrast_min, t.contrast_max};
  tc.augmentation.saturation = {t.saturation_min, t.saturation_max};
  tc.augmentation.hue = {t.hue_min, t.hue_max};
  tc.adamw.weight_decay = t.weight_decay;
  tc.flow_loss_weight = t.flow_loss_weight;
  tc.stop_at_val_f1 = t.stop_at_val_f1;
  tc.checkpoint_dir = out;
  const train::LossConfig lc{t.gamma, t.lambda};

  net::NetworkWeights initial = in.weights.empty() ? net::init_weights(ncfg, stage_seed(cfg.seed, "init"))
                                                   : net::load_weights(in.weights, ncfg);
  log.info("train: " + std::to_string(train_set.size()) + " training and " + std::to_string(val_set.size()) +
           " validation pairs, " + std::to_string(initial.parameter_count()) + " parameters");
  const train::TrainResult r = train::train(ncfg, std::move(initial), train_set, val_set, tc, lc,
                                            [&](const train::EpochRecord& e) {
                                              log.info("  epoch " + std::to_string(e.epoch) + " loss " +
                                                       fmt6(e.train_loss) + " val_f1 " + fmt6(e.val_f1));
                                            });
  const auto& best = r.log.epochs[static_cast<std::size_t>(r.log.best_epoch)];
  write_text(out / "train_report.txt", "best_epoch " + std::to_string(r.log.best_epoch) + "\nbest_val_f1 " +
                                           fmt6(best.val_f1) + "\nepochs " + std::to_string(r.log.epochs.size()) +
                                           "\nfinal_loss " + fmt6(r.log.epochs.back().train_loss) + "\n");
}

void cmd_infer(const RunConfig& cfg, const Inputs& in, const Log& log) {
  const data::DatasetManifest m = load_required(in.manifest, "manifest");
  const fs::path out = prepare_out(cfg);
  fs::create_directories(out / "pred");
  const net::NetworkConfig ncfg = network_config(cfg, image_width(m));
  const net::NetworkWeights weights = load_model(in.weights, ncfg);
  const auto preds = predict_all(m, ncfg, weights, 0.0, 0, log);
  std::string listing;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& e = m.entries[i];
    const std::string rel = "pred/" + frame_tag(e.sequence_id, e.frame_index) + ".prob";
    eval::write_probability_map(out / rel, preds[i]);
    listing += e.sequence_id + ", " + std::to_string(e.frame_index) + ", " + rel + "\n";
  }
  write_text(out / "predictions.txt", listing);
  log.info("infer: " + std::to_string(preds.size()) + " edge maps");
}

std::vector<PredictionEntry> read_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open predictions list: " + path.string());
  std::vector<PredictionEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    PredictionEntry e;
    if (!(ss >> e.sequence_id >> e.frame_index >> e.path))
      throw DataError("malformed predictions line " + std::to_string(lineno) + " in " + path.string());
    e.path = (path.parent_path() / e.path).string();
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::vector<eval::EdgeProbabilityMap> matched_predictions(const data::DatasetManifest& m, const fs::path& list) {
  const auto entries = read_predictions(list);
  if (entries.size() != m.entries.size())
    throw DataError("prediction count " + std::to_string(entries.size()) + " does not match ground-truth count " +
                    std::to_string(m.entries.size()));
  std::vector<eval::EdgeProbabilityMap> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& g = m.entries[i];
    if (entries[i].sequence_id != g.sequence_id || entries[i].frame_index != g.frame_index)
      throw DataError("prediction " + frame_tag(entries[i].sequence_id, entries[i].frame_index) +
                      " is listed where the manifest has " + frame_tag(g.sequence_id, g.frame_index));
    out.push_back(eval::read_probability_map(entries[i].path));
  }
  return out;
}

}  // namespace

void cmd_eval(const RunConfig& cfg, const Inputs& in, const Log& log) {
  const data::DatasetManifest m = load_required(in.manifest, "manifest");
  const auto preds = matched_predictions(m, require_path(in.predictions, "predictions"));
  const auto gts = ground_truth_of(m);
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (preds[i].width != gts[i].width || preds[i].height != gts[i].height)
      throw DataError("prediction " + std::to_string(preds[i].width) + "x" + std::to_string(preds[i].height) +
                      " and ground truth " + std::to_string(gts[i].width) + "x" + std::to_string(gts[i].height) +
                      " differ for " + frame_tag(m.entries[i].sequence_id, m.entries[i].frame_index));
  const fs::path out = prepare_out(cfg);
  const eval::EvalReport report = eval::evaluate(preds, gts);
  eval::write_report(report, out / "eval_report.txt", out / "pr_curve.csv");
  log.info("eval: ods_f1 " + fmt6(report.ods.f1) + " at " + fmt6(report.ods.threshold) + ", ois_f1 " + fmt6(report.ois));
}

void cmd_noise(const RunConfig& cfg, const Inputs& in, const Log& log) {
  const data::DatasetManifest m = load_required(in.manifest, "manifest");
  if (cfg.noise.sigmas.empty()) throw UsageError("no noise levels given");
  for (double s : cfg.noise.sigmas)
    if (!(s >= 0)) throw UsageError("noise sigma must be non-negative");
  const fs::path out = prepare_out(cfg);
  const net::NetworkConfig ncfg = network_config(cfg, image_width(m));
  const net::NetworkWeights weights = load_model(in.weights, ncfg);
  const auto gts = ground_truth_of(m);
  std::string report = "sigma, ods_f1, ods_threshold, ois_f1\n";
  for (std::size_t k = 0; k < cfg.noise.sigmas.size(); ++k) {
    const double sigma = cfg.noise.sigmas[k];
    const auto preds = predict_all(m, ncfg, weights, sigma, stage_seed(cfg.seed, "noise/" + std::to_string(k)), log);
    const eval::EvalReport r = eval::evaluate(preds, gts);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%g, %.6f, %.2f, %.6f\n", sigma, r.ods.f1, r.ods.threshold, r.ois);
    report += buf;
    log.info("noise: sigma " + format_number(sigma) + " ods_f1 " + fmt6(r.ods.f1) + " ois_f1 " + fmt6(r.ois));
  }
  write_text(out / "noise_report.txt", report);
}

void cmd_speed(const RunConfig& cfg, const Inputs& in, const Log& log) {
  const data::DatasetManifest m = load_required(in.manifest, "manifest");
  const speed::Axis axis = speed::parse_axis(cfg.speed.axis);
  std::vector<dic::CrackEdgeMap> maps;
  if (!in.predictions.empty()) {
    for (const auto& p : matched_predictions(m, in.predictions)) maps.push_back(eval::threshold_map(p, cfg.speed.threshold));
  } else {
    maps = ground_truth_of(m);
  }
  const fs::path out = prepare_out(cfg);
  const std::size_t width = image_width(m);
  std::string summary = "sequence, mean_mm_s, path_length_mm, retreats\n";
  for (const auto& [id, idx] : sequences_of(m)) {
    std::vector<dic::CrackEdgeMap> seq;
    std::vector<double> ts;
    for (std::size_t i : idx) {
      seq.push_back(maps[i]);
      ts.push_back(m.entries[i].timestamp_s);
    }
    const double mm = m.entries[idx.front()].mm_per_px * static_cast<double>(width) / static_cast<double>(seq.front().width);
    const auto trace = speed::trace_fronts(seq, ts, mm, axis);
    const auto report = speed::compute_speed(trace, cfg.speed.tolerance_px);
    speed::write_report(out / ("speed_" + id + ".txt"), trace, report);
    summary += id + ", " + fmt6(report.mean_mm_s) + ", " + fmt6(report.path_length_mm) + ", " +
               std::to_string(report.retreats.size()) + "\n";
    log.info("speed: " + id + " mean " + fmt6(report.mean_mm_s) + " mm/s");
  }
  write_text(out / "speed_summary.txt", summary);
}

int exit_code_for(const std::exception& e) {
  if (const auto* ce = dynamic_cast<const Error*>(&e)) {
    switch (ce->kind()) {
      case ErrorKind::kUsage: return 1;
      case ErrorKind::kData: return 2;
      case ErrorKind::kNumeric: return 3;
    }
  }
  if (dynamic_cast<const std::bad_alloc*>(&e)) return 3;
  return 2;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"crackprop: crack-edge detection and crack-propagation speed from image pairs"};
  app.name("crackprop");
  app.require_subcommand(1, 1);

  struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> sets;
    int verbose = 0;
    bool quiet = false;
    std::optional<std::string> sigma;
    std::optional<double> threshold;
    std::optional<int> epochs;
    std::optional<double> channel_scale;
    Inputs in;
  } o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "root seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--set", o.sets, "override one config key (key=value)");
    sub->add_flag("-v,--verbose", o.verbose, "more progress output");
    sub->add_flag("-q,--quiet", o.quiet, "no progress output");
  };
  auto manifest = [&](CLI::App* sub) { sub->add_option("--manifest", o.in.manifest, "dataset manifest"); };
  auto net_flags = [&](CLI::App* sub) {
    sub->add_option("--weights", o.in.weights, "weight file");
    sub->add_option("--channel-scale", o.channel_scale, "network width multiplier");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate synthetic speckle sequences with exact labels");
  common(synth);
  CLI::App* label = app.add_subcommand("label", "label crack edges by DIC with temporal correction");
  common(label);
  manifest(label);
  CLI::App* trn = app.add_subcommand("train", "train the cascade");
  common(trn);
  manifest(trn);
  net_flags(trn);
  trn->add_option("--val-manifest", o.in.val_manifest, "validation manifest");
  trn->add_option("--epochs", o.epochs, "training epochs");
  trn->add_option("--threshold", o.threshold, "validation threshold");
  CLI::App* infer = app.add_subcommand("infer", "predict edge probabilities");
  common(infer);
  manifest(infer);
  net_flags(infer);
  CLI::App* ev = app.add_subcommand("eval", "ODS / OIS evaluation");
  common(ev);
  manifest(ev);
  ev->add_option("--predictions", o.in.predictions, "predictions list written by infer");
  CLI::App* noise = app.add_subcommand("noise", "evaluate under injected Gaussian noise");
  common(noise);
  manifest(noise);
  net_flags(noise);
  noise->add_option("--sigma", o.sigma, "comma-separated noise levels");
  CLI::App* spd = app.add_subcommand("speed", "crack-propagation speed per sequence");
  common(spd);
  manifest(spd);
  spd->add_option("--predictions", o.in.predictions, "use thresholded predictions instead of ground truth");
  spd->add_option("--threshold", o.threshold, "probability threshold for predictions");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    RunConfig cfg;
    if (!o.config.empty()) cfg.merge_file(o.config);
    for (const auto& s : o.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out = *o.out;
    if (o.quiet) cfg.verbosity = 0;
    if (o.verbose) cfg.verbosity = 1 + o.verbose;
    if (o.sigma) cfg.noise.sigmas = parse_number_list(*o.sigma);
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.channel_scale) cfg.net.channel_scale = *o.channel_scale;
    if (o.threshold) {
      if (chosen == trn) cfg.train.val_threshold = *o.threshold;
      else cfg.speed.threshold = *o.threshold;
    }

    const Log log(err, cfg.verbosity);
    const std::string name = chosen->get_name();
    if (name == "synth") cmd_synth(cfg, log);
    else if (name == "label") cmd_label(cfg, o.in, log);
    else if (name == "train") cmd_train(cfg, o.in, log);
    else if (name == "infer") cmd_infer(cfg, o.in, log);
    else if (name == "eval") cmd_eval(cfg, o.in, log);
    else if (name == "noise") cmd_noise(cfg, o.in, log);
    else if (name == "speed") cmd_speed(cfg, o.in, log);
  } catch (const std::exception& e) {
    err << "crackprop " << chosen->get_name() << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace cpn::cli
