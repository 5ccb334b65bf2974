#include "cpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "cpn/error.hpp"
#include "cpn/tape.hpp"
#include "cpn/weights_io.hpp"

namespace cpn::train {

BalanceWeights balance_weights(const dic::CrackEdgeMap& gt, const LossConfig& cfg) {
  const double n = static_cast<double>(gt.pixels.size());
  const double pos = static_cast<double>(gt.count());
  return {cfg.gamma + pos / n, cfg.lambda * (n - pos) / n};
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

template <typename T>
LossResult<T> class_balanced_bce(const Tensor<T>& logits, std::span<const dic::CrackEdgeMap> gts,
                                 const LossConfig& cfg) {
  if (logits.rank() != 4 || logits.dim(1) != 1)
    throw ShapeError("loss expects N x 1 x h x w logits, got " + logits.shape().str());
  const std::size_t n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  if (gts.size() != n) throw ShapeError("loss got " + std::to_string(gts.size()) + " label maps for a batch of " + std::to_string(n));
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& gt = gts[b];
    if (gt.width != w || gt.height != h)
      throw ShapeError("label map " + std::to_string(gt.width) + "x" + std::to_string(gt.height) +
                       " does not match edge output " + std::to_string(w) + "x" + std::to_string(h));
    const BalanceWeights bw = balance_weights(gt, cfg);
    if (bw.alpha < 0 || bw.beta < 0) throw ShapeError("loss weights must be non-negative");
    double sum = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      const double z = logits[b * h * w + i];
      double g;
      if (gt.pixels[i]) {
        sum += bw.beta * softplus(-z);             // -beta * log sigmoid(z)
        g = -bw.beta * (1.0 - sigmoid(z));
      } else {
        sum += bw.alpha * softplus(z);             // -alpha * log(1 - sigmoid(z))
        g = bw.alpha * sigmoid(z);
      }
      r.grad[b * h * w + i] = static_cast<T>(g * inv_n);
    }
    r.loss += sum * inv_n;
  }
  return r;
}

template LossResult<float> class_balanced_bce(const TensorF&, std::span<const dic::CrackEdgeMap>, const LossConfig&);
template LossResult<double> class_balanced_bce(const TensorD&, std::span<const dic::CrackEdgeMap>, const LossConfig&);

OptimizerState make_optimizer(const net::NetworkWeights& weights, const AdamWConfig& hyper, double base_lr) {
  OptimizerState s;
  s.hyper = hyper;
  s.base_lr = base_lr;
  for (const auto& [name, t] : weights) {
    s.m.emplace_back(t.size(), 0.0f);
    s.v.emplace_back(t.size(), 0.0f);
  }
  return s;
}

void adamw_step(std::span<TensorF* const> params, std::span<const TensorF* const> grads, OptimizerState& state,
                double lr) {
  if (params.size() != grads.size()) throw ShapeError("parameter and gradient counts differ");
  if (state.m.empty() && state.step == 0) {
    for (const TensorF* p : params) {
      state.m.emplace_back(p->size(), 0.0f);
      state.v.emplace_back(p->size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->shape() != params[i]->shape() || state.m[i].size() != params[i]->size())
      throw ShapeError("gradient " + std::to_string(i) + " shape " + grads[i]->shape().str() + " does not match parameter " +
                       params[i]->shape().str());
    if (!grads[i]->all_finite())
      throw NumericError("non-finite gradient in parameter " + std::to_string(i) + "; optimizer step rejected");
  }
  ++state.step;
  const auto& hp = state.hyper;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * hp.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i]->ptr();
    const float* g = grads[i]->ptr();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      const double mk = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
      const double vk = hp.beta2 * v[k] + (1.0 - hp.beta2) * static_cast<double>(g[k]) * g[k];
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      if (lr == 0.0) continue;
      const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + hp.epsilon);
      p[k] = static_cast<float>(p[k] * decay - step);
    }
  }
}

void adamw_step(net::NetworkWeights& params, const net::NetworkWeights& grads, OptimizerState& state, double lr) {
  std::vector<TensorF*> ps;
  std::vector<const TensorF*> gs;
  for (auto& [name, t] : params) {
    if (!grads.contains(name)) throw ShapeError("missing gradient for " + name);
    ps.push_back(&t);
    gs.push_back(&grads.at(name));
  }
  try {
    adamw_step(std::span<TensorF* const>(ps), std::span<const TensorF* const>(gs), state, lr);
  } catch (const NumericError&) {
    for (const auto& [name, g] : grads)
      if (!g.all_finite()) throw NumericError("non-finite gradient in " + name + "; optimizer step rejected");
    throw;
  }
}

double lr_at(int epoch, double base, int period) {
  if (epoch < 0) throw ShapeError("epoch must be non-negative");
  if (period < 1) throw ShapeError("halving period must be at least 1");
  return base / std::ldexp(1.0, epoch / period);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ShapeError("batch size must be at least 1");
  if (epochs < 1) throw ShapeError("epochs must be at least 1");
  if (halving_period < 1) throw ShapeError("halving period must be at least 1");
  if (!(base_lr >= 0)) throw ShapeError("learning rate must be non-negative");
  if (!(val_threshold > 0 && val_threshold < 1)) throw ShapeError("validation threshold must lie in (0, 1)");
  if (flow_loss_weight < 0) throw ShapeError("flow loss weight must be non-negative");
  augmentation.validate();
}

std::string TrainingLog::to_text() const {
  std::string s = "epoch, lr, train_loss, val_f1, is_best\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d, %.6e, %.6f, %.6f, %d\n", e.epoch, e.lr, e.train_loss, e.val_f1, e.is_best ? 1 : 0);
    s += buf;
  }
  return s;
}

namespace {

/// Endpoint-error term on one flow output; returns its value and writes the seed.
double flow_epe(const TensorF& flow, const TensorF& truth, double weight, TensorF& seed) {
  const std::size_t n = flow.dim(0), plane = flow.dim(2) * flow.dim(3);
  seed = TensorF(flow.shape());
  const double scale = weight / static_cast<double>(n * plane);
  double total = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t iu = b * 2 * plane + i, iv = iu + plane;
      const double du = flow[iu] - truth[iu], dv = flow[iv] - truth[iv];
      const double len = std::sqrt(du * du + dv * dv);
      total += len;
      if (len > 1e-12) {
        seed[iu] = static_cast<float>(scale * du / len);
        seed[iv] = static_cast<float>(scale * dv / len);
      }
    }
  return total * scale;
}

}  // namespace

GradientResult compute_gradients(const net::NetworkConfig& net_cfg, const net::NetworkWeights& weights,
                                 std::span<const data::Sample* const> batch, const LossConfig& loss_cfg,
                                 double flow_loss_weight) {
  if (batch.empty()) throw ShapeError("empty batch");
  std::vector<const TensorF*> refs, defs, flows;
  std::vector<dic::CrackEdgeMap> gts;
  for (const data::Sample* s : batch) {
    if (!s->ground_truth) throw DataError("training sample without ground truth");
    refs.push_back(&s->reference);
    defs.push_back(&s->deformed);
    gts.push_back(*s->ground_truth);
    if (flow_loss_weight > 0) {
      if (!s->flow) throw DataError("flow supervision requested but a sample has no true flow");
      flows.push_back(&*s->flow);
    }
  }
  Tape<float> tape;
  net::CascadeBuilder builder(net_cfg, weights, tape);
  const auto vars = builder.forward(tape.constant(data::stack_batch(refs)), tape.constant(data::stack_batch(defs)));

  LossResult<float> edge = class_balanced_bce(tape.value(vars.edge_logits), gts, loss_cfg);
  GradientResult out;
  out.loss = edge.loss;
  std::vector<std::pair<VarId, const TensorF*>> seeds{{vars.edge_logits, &edge.grad}};
  TensorF truth, seed1, seed2;
  if (flow_loss_weight > 0) {
    truth = data::stack_batch(flows);
    out.loss += flow_epe(tape.value(vars.flow1), truth, flow_loss_weight, seed1);
    out.loss += flow_epe(tape.value(vars.flow2), truth, flow_loss_weight, seed2);
    seeds.emplace_back(vars.flow1, &seed1);
    seeds.emplace_back(vars.flow2, &seed2);
  }
  tape.backward(std::span<const std::pair<VarId, const TensorF*>>(seeds));

  const auto& bound = builder.parameters();
  for (const auto& [name, t] : weights) {
    auto it = bound.find(name);
    TensorF g(t.shape());
    if (it != bound.end() && !tape.grad(it->second).empty()) g = tape.grad(it->second);
    out.grads.add(name, std::move(g));
  }
  return out;
}

eval::EdgeProbabilityMap predict_edges(const net::NetworkConfig& net_cfg, const net::NetworkWeights& weights,
                                       const TensorF& reference, const TensorF& deformed) {
  const TensorF* r[] = {&reference};
  const TensorF* d[] = {&deformed};
  const auto result = net::crackpropnet_forward(net_cfg, weights, data::stack_batch(r), data::stack_batch(d));
  const TensorF& p = result.edge_prob;
  eval::EdgeProbabilityMap map(p.dim(3), p.dim(2));
  std::copy(p.ptr(), p.ptr() + p.size(), map.values.begin());
  return map;
}

double validation_f1(const net::NetworkConfig& net_cfg, const net::NetworkWeights& weights,
                     std::span<const data::Sample> samples, double threshold) {
  eval::Confusion pooled;
  for (const auto& s : samples) {
    if (!s.ground_truth) continue;
    pooled += eval::confusion_at_threshold(predict_edges(net_cfg, weights, s.reference, s.deformed), *s.ground_truth,
                                           threshold);
  }
  return eval::f1(pooled);
}

TrainResult train(const net::NetworkConfig& net_cfg, net::NetworkWeights initial, std::span<const data::Sample> train_set,
                  std::span<const data::Sample> val_set, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  net_cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");
  net::check_weights(initial, net_cfg);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  TrainResult result;
  result.last = std::move(initial);
  OptimizerState opt = make_optimizer(result.last, cfg.adamw, cfg.base_lr);
  std::mt19937_64 rng(cfg.seed);
  double best_f1 = -1.0;
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.base_lr, cfg.halving_period);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // Online augmentation: fresh copies, one transform set per pair.
      std::vector<data::Sample> batch;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train_set[order[k]]);
        data::apply_augmentation(batch.back(), data::sample_augmentation(cfg.augmentation, rng));
      }
      std::vector<const data::Sample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);
      GradientResult g = compute_gradients(net_cfg, result.last, ptrs, loss_cfg, cfg.flow_loss_weight);
      if (!std::isfinite(g.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batches));
      adamw_step(result.last, g.grads, opt, lr);
      loss_sum += g.loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_f1 = validation_f1(net_cfg, result.last, val_set, cfg.val_threshold);
    rec.is_best = rec.val_f1 > best_f1;
    if (rec.is_best) {
      best_f1 = rec.val_f1;
      result.best = result.last;
      result.log.best_epoch = epoch;
    }
    result.log.epochs.push_back(rec);

    if (!cfg.checkpoint_dir.empty()) {
      if (rec.is_best) net::save_weights(result.best, cfg.checkpoint_dir / "best.cpnw");
      net::save_weights(result.last, cfg.checkpoint_dir / "last.cpnw");
      std::ofstream log(cfg.checkpoint_dir / "train_log.txt", std::ios::binary);
      log << result.log.to_text();
    }
    if (on_epoch) on_epoch(rec);
    if (rec.val_f1 >= cfg.stop_at_val_f1) break;
  }
  return result;
}

TrainResult train(const net::NetworkConfig& net_cfg, net::NetworkWeights initial, const data::DatasetManifest& train_set,
                  const data::DatasetManifest& val_set, const TrainConfig& cfg, const LossConfig& loss_cfg,
                  const EpochCallback& on_epoch) {
  if (train_set.entries.empty()) throw DataError("training manifest is empty");
  if (val_set.entries.empty()) throw DataError("validation manifest is empty");
  auto load = [&](const data::DatasetManifest& m) {
    std::vector<data::Sample> out;
    for (const auto& e : m.entries) {
      if (!e.ground_truth_path) throw DataError("manifest entry " + e.sequence_id + "/" + std::to_string(e.frame_index) + " has no ground truth");
      out.push_back(data::load_sample(m, e));
    }
    return out;
  };
  const auto tr = load(train_set);
  const auto va = load(val_set);
  return train(net_cfg, std::move(initial), tr, va, cfg, loss_cfg, on_epoch);
}

}  // namespace cpn::train
