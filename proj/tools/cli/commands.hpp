#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace cpn::cli {

/// Paths a subcommand reads besides its config.
struct Inputs {
  std::filesystem::path manifest;
  std::filesystem::path val_manifest;
  std::filesystem::path weights;
  std::filesystem::path predictions;
};

/// Progress messages on a stream, filtered by verbosity.
class Log {
 public:
  Log(std::ostream& stream, int verbosity) : stream_(stream), verbosity_(verbosity) {}
  void info(const std::string& msg) const;
  void detail(const std::string& msg) const;

 private:
  std::ostream& stream_;
  int verbosity_;
};

/// Writes pairs, exact labels, flow sidecars and manifest.txt.
void cmd_synth(const RunConfig& cfg, const Log& log);
/// DIC labelling with temporal correction; writes labels and a relabelled manifest.txt.
void cmd_label(const RunConfig& cfg, const Inputs& in, const Log& log);
/// Trains from in.manifest (validation from in.val_manifest or a held-out split).
void cmd_train(const RunConfig& cfg, const Inputs& in, const Log& log);
/// Edge probabilities for every manifest entry plus predictions.txt.
void cmd_infer(const RunConfig& cfg, const Inputs& in, const Log& log);
/// ODS/OIS of predictions against the manifest's ground truth.
void cmd_eval(const RunConfig& cfg, const Inputs& in, const Log& log);
/// Re-evaluates under Gaussian noise for every sigma in cfg.noise.sigmas.
void cmd_noise(const RunConfig& cfg, const Inputs& in, const Log& log);
/// Crack-front speed per sequence from ground truth or thresholded predictions.
void cmd_speed(const RunConfig& cfg, const Inputs& in, const Log& log);

/// Exit status for an exception escaping a subcommand: 1 usage, 2 data, 3 numeric.
int exit_code_for(const std::exception& e);

/// Full command line without the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One line of predictions.txt.
struct PredictionEntry {
  std::string sequence_id;
  int frame_index = 0;
  std::string path;
};
std::vector<PredictionEntry> read_predictions(const std::filesystem::path& path);

}  // namespace cpn::cli
