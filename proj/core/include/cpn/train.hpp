#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cpn/data.hpp"
#include "cpn/eval.hpp"
#include "cpn/network.hpp"

/// Supervised training: class-balanced loss, AdamW, step schedule, validation.
namespace cpn::train {

struct LossConfig {
  double gamma = 0.0;   // offset on the negative-class weight
  double lambda = 1.1;  // multiplier on the positive-class weight
};

struct BalanceWeights {
  double alpha = 0.0;  // weight on negatives: gamma + |Y+| / N
  double beta = 0.0;   // weight on positives: lambda * |Y-| / N
};

BalanceWeights balance_weights(const dic::CrackEdgeMap& gt, const LossConfig& cfg);

template <typename T>
struct LossResult {
  double loss = 0.0;  // mean over the batch of the per-map summed loss
  Tensor<T> grad;     // d loss / d logits, same shape as the logits
};

/// Negated class-balanced log-likelihood of sigmoid(logits) against binary
/// maps. Logits are N x 1 x h x w with one map per batch member.
template <typename T>
LossResult<T> class_balanced_bce(const Tensor<T>& logits, std::span<const dic::CrackEdgeMap> gts,
                                 const LossConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  AdamWConfig hyper;
  double base_lr = 5e-5;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

OptimizerState make_optimizer(const net::NetworkWeights& weights, const AdamWConfig& hyper, double base_lr);

/// Decoupled-weight-decay Adam with bias correction. Rejects the whole step
/// (NumericError, parameters untouched) if any gradient is non-finite.
void adamw_step(std::span<TensorF* const> params, std::span<const TensorF* const> grads, OptimizerState& state,
                double lr);
void adamw_step(net::NetworkWeights& params, const net::NetworkWeights& grads, OptimizerState& state, double lr);

/// base / 2^floor(epoch / period).
double lr_at(int epoch, double base, int period);

struct TrainConfig {
  std::size_t batch_size = 6;
  int epochs = 40;
  double base_lr = 5e-5;
  int halving_period = 5;
  double val_threshold = 0.5;
  std::uint64_t seed = 0;
  data::AugmentationConfig augmentation;
  AdamWConfig adamw;
  /// Weight of optional endpoint-error supervision on both flow outputs; 0 disables it.
  double flow_loss_weight = 0.0;
  /// Stop once validation F-1 reaches this value; values above 1 never stop early.
  double stop_at_val_f1 = 2.0;
  /// Writes best.cpnw, last.cpnw and train_log.txt here when set.
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
  bool is_best = false;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  /// "epoch, lr, train_loss, val_f1, is_best" lines.
  std::string to_text() const;
  friend bool operator==(const TrainingLog& a, const TrainingLog& b) { return a.to_text() == b.to_text(); }
};

struct TrainResult {
  net::NetworkWeights best;
  net::NetworkWeights last;
  TrainingLog log;
};

struct GradientResult {
  double loss = 0.0;
  net::NetworkWeights grads;
};

/// Forward and backward through the whole cascade for one batch.
GradientResult compute_gradients(const net::NetworkConfig& net_cfg, const net::NetworkWeights& weights,
                                 std::span<const data::Sample* const> batch, const LossConfig& loss_cfg,
                                 double flow_loss_weight);

eval::EdgeProbabilityMap predict_edges(const net::NetworkConfig& net_cfg, const net::NetworkWeights& weights,
                                       const TensorF& reference, const TensorF& deformed);

/// Pooled F-1 at `threshold` over samples with ground truth.
double validation_f1(const net::NetworkConfig& net_cfg, const net::NetworkWeights& weights,
                     std::span<const data::Sample> samples, double threshold);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const net::NetworkConfig& net_cfg, net::NetworkWeights initial, std::span<const data::Sample> train_set,
                  std::span<const data::Sample> val_set, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  const EpochCallback& on_epoch = {});

/// Loads both manifests (pairs must carry ground truth) and trains.
TrainResult train(const net::NetworkConfig& net_cfg, net::NetworkWeights initial, const data::DatasetManifest& train_set,
                  const data::DatasetManifest& val_set, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace cpn::train
