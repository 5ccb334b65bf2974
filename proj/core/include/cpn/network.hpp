#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cpn/tape.hpp"
#include "cpn/tensor.hpp"

namespace cpn::net {

struct NetworkConfig {
  /// Multiplies every FlowNet channel width; 1.0 is the published width.
  double channel_scale = 0.25;
  /// Correlation patch radius k (patch side 2k+1) and displacement radius d.
  int corr_patch_radius = 0;
  int corr_displacement_radius = 10;
  std::size_t input_size = 1024;
  std::size_t edge_map_size = 128;
  double leaky_slope = 0.1;
  /// Flow heads predict flow / flow_scale.
  double flow_scale = 20.0;

  /// Throws ShapeError on an inconsistent configuration.
  void validate() const;
  /// Channel width after scaling, at least 1.
  std::size_t width(std::size_t full) const;
};

/// Fixed ratio between input side and edge-map side.
inline constexpr std::size_t kOutputStride = 8;
/// Input sides must be multiples of this (six stride-2 stages).
inline constexpr std::size_t kInputMultiple = 64;
/// Channels fed to a stacked FlowNetS: I_r(3) + I_d(3) + w(2) + warped I_d(3) + e(1).
inline constexpr std::size_t kStackedChannels = 12;

enum class LayerKind { kConv, kDeconv };

struct LayerSpec {
  std::string name;  // e.g. "netc.conv3_1"
  LayerKind kind;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
  int stride;
  int padding;
  bool bias;

  Shape weight_shape() const;
};

/// Which stage of the cascade a layer belongs to.
enum class SubNetwork { kFlowNetC, kFlowNetS, kEdgeFlowNetS };

std::vector<LayerSpec> flownet_c_layers(const NetworkConfig& cfg);
std::vector<LayerSpec> flownet_s_layers(const NetworkConfig& cfg, std::string_view prefix);
std::vector<LayerSpec> edge_flownet_s_layers(const NetworkConfig& cfg, std::string_view prefix);
/// Whole cascade: FlowNetC ("netc"), FlowNetS ("nets1"), edge FlowNetS ("nets2").
std::vector<LayerSpec> layer_inventory(const NetworkConfig& cfg);

/// Named parameter tensors in insertion order (the weight-file order).
class NetworkWeights {
 public:
  void add(std::string name, TensorF tensor);
  bool contains(std::string_view name) const;
  TensorF& at(std::string_view name);
  const TensorF& at(std::string_view name) const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const NetworkWeights& a, const NetworkWeights& b);

 private:
  std::vector<std::pair<std::string, TensorF>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Expected (name, shape) list for a configuration, in file order.
std::vector<std::pair<std::string, Shape>> expected_parameters(const NetworkConfig& cfg);

/// He-style initialisation, deterministic in `seed`.
NetworkWeights init_weights(const NetworkConfig& cfg, std::uint64_t seed);
NetworkWeights zero_weights(const NetworkConfig& cfg);
/// Throws ShapeError naming the first missing, extra or mis-shaped entry.
void check_weights(const NetworkWeights& weights, const NetworkConfig& cfg);

/// Handles produced by one cascade forward pass.
struct CascadeVars {
  VarId flow1;
  VarId flow2;
  VarId edge_logits;
  VarId edge_prob;
};

/// Builds CrackPropNet sub-graphs on a tape. Parameters are borrowed from
/// `weights`, which must outlive the tape.
class CascadeBuilder {
 public:
  CascadeBuilder(const NetworkConfig& cfg, const NetworkWeights& weights, Tape<float>& tape);

  /// Images are N x 3 x H x W in [0, 1]; returns flow N x 2 x H x W in pixels.
  VarId flownet_c(VarId reference, VarId deformed);
  /// Stacked input N x 12 x H x W.
  VarId flownet_s(VarId stacked, std::string_view prefix = "nets1");
  /// Edge logits N x 1 x H/8 x W/8 from the modified FlowNetS.
  VarId edge_flownet_s(VarId stacked, std::string_view prefix = "nets2");
  /// RCF-style fusion of expanding-stage features (strides 64, 32, 16, 8).
  VarId edge_head(std::span<const VarId> features, std::string_view prefix = "nets2");
  /// Stacks [I_r, I_d, flow / flow_scale, warp(I_d, flow), |warp - I_r|].
  VarId stack_inputs(VarId reference, VarId deformed, VarId flow);
  CascadeVars forward(VarId reference, VarId deformed);
  /// Tape handles of every parameter bound so far, by weight name.
  const std::unordered_map<std::string, VarId>& parameters() const noexcept { return bound_; }

 private:
  struct Encoded {
    VarId conv2, conv3_1, conv4_1, conv5_1, conv6_1;
  };
  struct Decoded {
    VarId concat5, concat4, concat3, concat2;
  };

  VarId param(const std::string& name);
  VarId conv(const std::string& layer, VarId x, bool activate);
  VarId deconv(const std::string& layer, VarId x, bool activate);
  VarId act(VarId x);
  Encoded encode_tail(const std::string& prefix, VarId conv3_input, VarId conv2);
  Decoded decode(const std::string& prefix, const Encoded& enc, bool full);

  const NetworkConfig& cfg_;
  const NetworkWeights& weights_;
  Tape<float>& tape_;
  std::unordered_map<std::string, LayerSpec> layers_;
  std::unordered_map<std::string, VarId> bound_;
};

/// Result of a full forward pass, as plain tensors.
struct CascadeResult {
  TensorF flow1;      // N x 2 x H x W
  TensorF flow2;      // N x 2 x H x W
  TensorF edge_prob;  // N x 1 x H/8 x W/8
};

TensorF flownet_c_forward(const NetworkConfig& cfg, const NetworkWeights& weights, const TensorF& reference,
                          const TensorF& deformed);
TensorF flownet_s_forward(const NetworkConfig& cfg, const NetworkWeights& weights, const TensorF& stacked);
TensorF edge_head_forward(const NetworkConfig& cfg, const NetworkWeights& weights,
                          std::span<const TensorF> expanding_features);
CascadeResult crackpropnet_forward(const NetworkConfig& cfg, const NetworkWeights& weights, const TensorF& reference,
                                   const TensorF& deformed);

}  // namespace cpn::net
