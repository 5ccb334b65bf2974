#include "cpn/network.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cpn/error.hpp"

namespace cpn::net {

void NetworkConfig::validate() const {
  if (!(channel_scale > 0.0 && channel_scale <= 1.0)) throw ShapeError("channel_scale must lie in (0, 1]");
  if (corr_patch_radius < 0 || corr_displacement_radius < 0)
    throw ShapeError("correlation radii must be non-negative");
  if (edge_map_size == 0 || input_size != edge_map_size * kOutputStride)
    throw ShapeError("input_size / edge_map_size must equal " + std::to_string(kOutputStride) + " (got " +
                     std::to_string(input_size) + " / " + std::to_string(edge_map_size) + ")");
  if (input_size % kInputMultiple != 0)
    throw ShapeError("input_size must be a multiple of " + std::to_string(kInputMultiple));
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ShapeError("leaky slope must lie in [0, 1)");
  if (!(flow_scale > 0.0)) throw ShapeError("flow_scale must be positive");
}

std::size_t NetworkConfig::width(std::size_t full) const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(full) * channel_scale)));
}

Shape LayerSpec::weight_shape() const {
  return kind == LayerKind::kConv ? Shape{out_channels, in_channels, kernel, kernel}
                                  : Shape{in_channels, out_channels, kernel, kernel};
}

namespace {

LayerSpec conv_layer(std::string name, std::size_t in, std::size_t out, std::size_t k, int stride) {
  return {std::move(name), LayerKind::kConv, in, out, k, stride, static_cast<int>(k / 2), true};
}

LayerSpec deconv_layer(std::string name, std::size_t in, std::size_t out, bool bias) {
  return {std::move(name), LayerKind::kDeconv, in, out, 4, 2, 1, bias};
}

struct Widths {
  std::size_t c1, c2, c3, c4, c5, c6, d5, d4, d3, d2;
};

Widths widths(const NetworkConfig& cfg) {
  return {cfg.width(64),  cfg.width(128), cfg.width(256), cfg.width(512), cfg.width(512),
          cfg.width(1024), cfg.width(512), cfg.width(256), cfg.width(128), cfg.width(64)};
}

// conv3_1 .. conv6_1 shared by all three FlowNets.
void add_encoder_tail(std::vector<LayerSpec>& out, const std::string& p, std::size_t conv3_1_in, const Widths& w) {
  out.push_back(conv_layer(p + ".conv3_1", conv3_1_in, w.c3, 3, 1));
  out.push_back(conv_layer(p + ".conv4", w.c3, w.c4, 3, 2));
  out.push_back(conv_layer(p + ".conv4_1", w.c4, w.c4, 3, 1));
  out.push_back(conv_layer(p + ".conv5", w.c4, w.c5, 3, 2));
  out.push_back(conv_layer(p + ".conv5_1", w.c5, w.c5, 3, 1));
  out.push_back(conv_layer(p + ".conv6", w.c5, w.c6, 3, 2));
  out.push_back(conv_layer(p + ".conv6_1", w.c6, w.c6, 3, 1));
}

struct ConcatWidths {
  std::size_t c5, c4, c3, c2;
};

ConcatWidths concat_widths(const Widths& w, std::size_t conv2_width) {
  const std::size_t c5 = w.c5 + w.d5 + 2;
  const std::size_t c4 = w.c4 + w.d4 + 2;
  const std::size_t c3 = w.c3 + w.d3 + 2;
  const std::size_t c2 = conv2_width + w.d2 + 2;
  return {c5, c4, c3, c2};
}

// Expanding part; `full` adds the stride-4 stage and the final flow head.
void add_decoder(std::vector<LayerSpec>& out, const std::string& p, const Widths& w, bool full) {
  const ConcatWidths cw = concat_widths(w, w.c2);
  out.push_back(conv_layer(p + ".predict_flow6", w.c6, 2, 3, 1));
  out.push_back(deconv_layer(p + ".upsampled_flow6_to_5", 2, 2, false));
  out.push_back(deconv_layer(p + ".deconv5", w.c6, w.d5, true));
  out.push_back(conv_layer(p + ".predict_flow5", cw.c5, 2, 3, 1));
  out.push_back(deconv_layer(p + ".upsampled_flow5_to_4", 2, 2, false));
  out.push_back(deconv_layer(p + ".deconv4", cw.c5, w.d4, true));
  out.push_back(conv_layer(p + ".predict_flow4", cw.c4, 2, 3, 1));
  out.push_back(deconv_layer(p + ".upsampled_flow4_to_3", 2, 2, false));
  out.push_back(deconv_layer(p + ".deconv3", cw.c4, w.d3, true));
  out.push_back(conv_layer(p + ".predict_flow3", cw.c3, 2, 3, 1));
  if (!full) return;
  out.push_back(deconv_layer(p + ".upsampled_flow3_to_2", 2, 2, false));
  out.push_back(deconv_layer(p + ".deconv2", cw.c3, w.d2, true));
  out.push_back(conv_layer(p + ".predict_flow2", cw.c2, 2, 3, 1));
}

}  // namespace

std::vector<LayerSpec> flownet_c_layers(const NetworkConfig& cfg) {
  const Widths w = widths(cfg);
  const std::string p = "netc";
  const std::size_t span = 2 * static_cast<std::size_t>(cfg.corr_displacement_radius) + 1;
  const std::size_t redir = cfg.width(32);
  std::vector<LayerSpec> out;
  out.push_back(conv_layer(p + ".conv1", 3, w.c1, 7, 2));
  out.push_back(conv_layer(p + ".conv2", w.c1, w.c2, 5, 2));
  out.push_back(conv_layer(p + ".conv3", w.c2, w.c3, 5, 2));
  out.push_back(conv_layer(p + ".conv_redir", w.c3, redir, 1, 1));
  add_encoder_tail(out, p, span * span + redir, w);
  add_decoder(out, p, w, true);
  return out;
}

std::vector<LayerSpec> flownet_s_layers(const NetworkConfig& cfg, std::string_view prefix) {
  const Widths w = widths(cfg);
  const std::string p(prefix);
  std::vector<LayerSpec> out;
  out.push_back(conv_layer(p + ".conv1", kStackedChannels, w.c1, 7, 2));
  out.push_back(conv_layer(p + ".conv2", w.c1, w.c2, 5, 2));
  out.push_back(conv_layer(p + ".conv3", w.c2, w.c3, 5, 2));
  add_encoder_tail(out, p, w.c3, w);
  add_decoder(out, p, w, true);
  return out;
}

std::vector<LayerSpec> edge_flownet_s_layers(const NetworkConfig& cfg, std::string_view prefix) {
  const Widths w = widths(cfg);
  const ConcatWidths cw = concat_widths(w, w.c2);
  const std::string p(prefix);
  std::vector<LayerSpec> out;
  out.push_back(conv_layer(p + ".conv1", kStackedChannels, w.c1, 7, 2));
  out.push_back(conv_layer(p + ".conv2", w.c1, w.c2, 5, 2));
  out.push_back(conv_layer(p + ".conv3", w.c2, w.c3, 5, 2));
  add_encoder_tail(out, p, w.c3, w);
  add_decoder(out, p, w, false);
  out.push_back(conv_layer(p + ".side6", w.c6, 1, 1, 1));
  out.push_back(conv_layer(p + ".side5", cw.c5, 1, 1, 1));
  out.push_back(conv_layer(p + ".side4", cw.c4, 1, 1, 1));
  out.push_back(conv_layer(p + ".side3", cw.c3, 1, 1, 1));
  out.push_back(conv_layer(p + ".fuse", 4, 1, 1, 1));
  return out;
}

std::vector<LayerSpec> layer_inventory(const NetworkConfig& cfg) {
  std::vector<LayerSpec> all = flownet_c_layers(cfg);
  for (auto& l : flownet_s_layers(cfg, "nets1")) all.push_back(std::move(l));
  for (auto& l : edge_flownet_s_layers(cfg, "nets2")) all.push_back(std::move(l));
  return all;
}

// ---------------------------------------------------------------------------

void NetworkWeights::add(std::string name, TensorF tensor) {
  if (index_.count(name)) throw ShapeError("duplicate parameter: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool NetworkWeights::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

TensorF& NetworkWeights::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ShapeError("missing parameter: " + std::string(name));
  return entries_[it->second].second;
}

const TensorF& NetworkWeights::at(std::string_view name) const {
  return const_cast<NetworkWeights*>(this)->at(name);
}

std::size_t NetworkWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& [na, ta] = a.entries_[i];
    const auto& [nb, tb] = b.entries_[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    if (!std::equal(ta.data().begin(), ta.data().end(), tb.data().begin(), [](float x, float y) {
          return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
        }))
      return false;
  }
  return true;
}

std::vector<std::pair<std::string, Shape>> expected_parameters(const NetworkConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& l : layer_inventory(cfg)) {
    out.emplace_back(l.name + ".weight", l.weight_shape());
    if (l.bias) out.emplace_back(l.name + ".bias", Shape{l.out_channels});
  }
  return out;
}

NetworkWeights zero_weights(const NetworkConfig& cfg) {
  NetworkWeights w;
  for (auto& [name, shape] : expected_parameters(cfg)) w.add(name, TensorF(shape));
  return w;
}

namespace {

bool is_activated(const LayerSpec& l) {
  const std::string_view n = l.name;
  return n.find(".conv") != std::string_view::npos || n.find(".deconv") != std::string_view::npos;
}

}  // namespace

NetworkWeights init_weights(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkWeights weights;
  std::mt19937_64 rng(seed);
  for (const auto& l : layer_inventory(cfg)) {
    const Shape ws = l.weight_shape();
    // Effective fan-in; a stride-2 transposed conv sees a quarter of its taps per output.
    double fan_in = static_cast<double>(l.in_channels * l.kernel * l.kernel);
    if (l.kind == LayerKind::kDeconv) fan_in /= static_cast<double>(l.stride * l.stride);
    const double gain = is_activated(l) ? std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope)) : 1.0;
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
    TensorF w(ws);
    if (l.name.ends_with(".fuse")) {
      w.fill(1.0f / static_cast<float>(l.in_channels));
    } else {
      for (auto& v : w.data()) v = static_cast<float>(dist(rng));
    }
    weights.add(l.name + ".weight", std::move(w));
    if (l.bias) weights.add(l.name + ".bias", TensorF(Shape{l.out_channels}));
  }
  return weights;
}

void check_weights(const NetworkWeights& weights, const NetworkConfig& cfg) {
  const auto expected = expected_parameters(cfg);
  std::size_t i = 0;
  for (const auto& [name, tensor] : weights) {
    if (i >= expected.size()) throw ShapeError("unexpected parameter " + name + " (config has fewer layers)");
    const auto& [ename, eshape] = expected[i];
    if (name != ename) throw ShapeError("parameter order mismatch: found " + name + ", expected " + ename);
    if (tensor.shape() != eshape)
      throw ShapeError("shape mismatch in layer " + name + ": file has " + tensor.shape().str() + ", config expects " +
                       eshape.str());
    ++i;
  }
  if (i != expected.size()) throw ShapeError("missing parameter " + expected[i].first);
}

// ---------------------------------------------------------------------------

CascadeBuilder::CascadeBuilder(const NetworkConfig& cfg, const NetworkWeights& weights, Tape<float>& tape)
    : cfg_(cfg), weights_(weights), tape_(tape) {
  cfg_.validate();
  for (auto& l : layer_inventory(cfg_)) layers_.emplace(l.name, l);
}

VarId CascadeBuilder::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const VarId id = tape_.parameter(weights_.at(name));
  bound_.emplace(name, id);
  return id;
}

VarId CascadeBuilder::act(VarId x) {
  return tape_.leaky_relu(x, cfg_.leaky_slope);
}

VarId CascadeBuilder::conv(const std::string& layer, VarId x, bool activate) {
  const LayerSpec& l = layers_.at(layer);
  const VarId y = tape_.conv2d(x, param(layer + ".weight"), l.bias ? param(layer + ".bias") : VarId{}, l.stride,
                               l.padding);
  return activate ? act(y) : y;
}

VarId CascadeBuilder::deconv(const std::string& layer, VarId x, bool activate) {
  const LayerSpec& l = layers_.at(layer);
  const VarId y = tape_.deconv2d(x, param(layer + ".weight"), l.bias ? param(layer + ".bias") : VarId{}, l.stride,
                                 l.padding);
  return activate ? act(y) : y;
}

CascadeBuilder::Encoded CascadeBuilder::encode_tail(const std::string& p, VarId conv3_input, VarId conv2) {
  Encoded e;
  e.conv2 = conv2;
  e.conv3_1 = conv(p + ".conv3_1", conv3_input, true);
  e.conv4_1 = conv(p + ".conv4_1", conv(p + ".conv4", e.conv3_1, true), true);
  e.conv5_1 = conv(p + ".conv5_1", conv(p + ".conv5", e.conv4_1, true), true);
  e.conv6_1 = conv(p + ".conv6_1", conv(p + ".conv6", e.conv5_1, true), true);
  return e;
}

CascadeBuilder::Decoded CascadeBuilder::decode(const std::string& p, const Encoded& e, bool full) {
  Decoded d;
  const VarId flow6 = conv(p + ".predict_flow6", e.conv6_1, false);
  const VarId up6 = deconv(p + ".upsampled_flow6_to_5", flow6, false);
  const VarId de5 = deconv(p + ".deconv5", e.conv6_1, true);
  const VarId c5[] = {e.conv5_1, de5, up6};
  d.concat5 = tape_.concat(c5);

  const VarId flow5 = conv(p + ".predict_flow5", d.concat5, false);
  const VarId up5 = deconv(p + ".upsampled_flow5_to_4", flow5, false);
  const VarId de4 = deconv(p + ".deconv4", d.concat5, true);
  const VarId c4[] = {e.conv4_1, de4, up5};
  d.concat4 = tape_.concat(c4);

  const VarId flow4 = conv(p + ".predict_flow4", d.concat4, false);
  const VarId up4 = deconv(p + ".upsampled_flow4_to_3", flow4, false);
  const VarId de3 = deconv(p + ".deconv3", d.concat4, true);
  const VarId c3[] = {e.conv3_1, de3, up4};
  d.concat3 = tape_.concat(c3);

  if (full) {
    const VarId flow3 = conv(p + ".predict_flow3", d.concat3, false);
    const VarId up3 = deconv(p + ".upsampled_flow3_to_2", flow3, false);
    const VarId de2 = deconv(p + ".deconv2", d.concat3, true);
    const VarId c2[] = {e.conv2, de2, up3};
    d.concat2 = tape_.concat(c2);
  }
  return d;
}

namespace {

void check_image(const TensorF& t, std::size_t channels, const char* what) {
  if (t.rank() != 4 || t.dim(1) != channels)
    throw ShapeError(std::string(what) + ": expected N x " + std::to_string(channels) + " x H x W, got " +
                     t.shape().str());
  if (t.dim(2) % kInputMultiple != 0 || t.dim(3) % kInputMultiple != 0)
    throw ShapeError(std::string(what) + ": spatial size must be a multiple of " + std::to_string(kInputMultiple) +
                     ", got " + t.shape().str());
}

}  // namespace

VarId CascadeBuilder::flownet_c(VarId reference, VarId deformed) {
  check_image(tape_.value(reference), 3, "flownet_c reference");
  check_image(tape_.value(deformed), 3, "flownet_c deformed");
  const std::string p = "netc";
  const VarId a2 = conv(p + ".conv2", conv(p + ".conv1", reference, true), true);
  const VarId a3 = conv(p + ".conv3", a2, true);
  const VarId b3 = conv(p + ".conv3", conv(p + ".conv2", conv(p + ".conv1", deformed, true), true), true);
  const std::size_t channels = tape_.value(a3).dim(1);
  const std::size_t patch = 2 * static_cast<std::size_t>(cfg_.corr_patch_radius) + 1;
  VarId corr = tape_.correlate(a3, b3, cfg_.corr_patch_radius, cfg_.corr_displacement_radius);
  corr = act(tape_.scale(corr, 1.0 / static_cast<double>(channels * patch * patch)));
  const VarId redir = conv(p + ".conv_redir", a3, true);
  const VarId parts[] = {redir, corr};
  const Encoded e = encode_tail(p, tape_.concat(parts), a2);
  const Decoded d = decode(p, e, true);
  const VarId flow2 = conv(p + ".predict_flow2", d.concat2, false);
  return tape_.scale(tape_.upsample_bilinear(flow2, 4), cfg_.flow_scale);
}

VarId CascadeBuilder::flownet_s(VarId stacked, std::string_view prefix) {
  check_image(tape_.value(stacked), kStackedChannels, "flownet_s input");
  const std::string p(prefix);
  const VarId c2 = conv(p + ".conv2", conv(p + ".conv1", stacked, true), true);
  const VarId c3 = conv(p + ".conv3", c2, true);
  const Encoded e = encode_tail(p, c3, c2);
  const Decoded d = decode(p, e, true);
  const VarId flow2 = conv(p + ".predict_flow2", d.concat2, false);
  return tape_.scale(tape_.upsample_bilinear(flow2, 4), cfg_.flow_scale);
}

VarId CascadeBuilder::edge_head(std::span<const VarId> features, std::string_view prefix) {
  if (features.size() != 4) throw ShapeError("edge_head: expected 4 expanding-stage features");
  const std::string p(prefix);
  static constexpr const char* kSides[] = {"side6", "side5", "side4", "side3"};
  const std::size_t target_h = tape_.value(features[3]).dim(2);
  std::vector<VarId> sides;
  for (std::size_t i = 0; i < 4; ++i) {
    const VarId s = conv(p + "." + kSides[i], features[i], false);
    const std::size_t h = tape_.value(s).dim(2);
    if (target_h % h != 0) throw ShapeError("edge_head: feature strides are not nested");
    sides.push_back(tape_.upsample_bilinear(s, static_cast<int>(target_h / h)));
  }
  return conv(p + ".fuse", tape_.concat(sides), false);
}

VarId CascadeBuilder::edge_flownet_s(VarId stacked, std::string_view prefix) {
  check_image(tape_.value(stacked), kStackedChannels, "edge_flownet_s input");
  const std::string p(prefix);
  const VarId c2 = conv(p + ".conv2", conv(p + ".conv1", stacked, true), true);
  const VarId c3 = conv(p + ".conv3", c2, true);
  const Encoded e = encode_tail(p, c3, c2);
  const Decoded d = decode(p, e, false);
  const VarId feats[] = {e.conv6_1, d.concat5, d.concat4, d.concat3};
  return edge_head(feats, prefix);
}

VarId CascadeBuilder::stack_inputs(VarId reference, VarId deformed, VarId flow) {
  const VarId warped = tape_.warp(deformed, flow);
  const VarId err = tape_.brightness_error(warped, reference);
  const VarId parts[] = {reference, deformed, tape_.scale(flow, 1.0 / cfg_.flow_scale), warped, err};
  return tape_.concat(parts);
}

CascadeVars CascadeBuilder::forward(VarId reference, VarId deformed) {
  CascadeVars v;
  v.flow1 = flownet_c(reference, deformed);
  v.flow2 = flownet_s(stack_inputs(reference, deformed, v.flow1), "nets1");
  v.edge_logits = edge_flownet_s(stack_inputs(reference, deformed, v.flow2), "nets2");
  v.edge_prob = tape_.sigmoid(v.edge_logits);
  return v;
}

// ---------------------------------------------------------------------------

TensorF flownet_c_forward(const NetworkConfig& cfg, const NetworkWeights& weights, const TensorF& reference,
                          const TensorF& deformed) {
  Tape<float> tape;
  CascadeBuilder b(cfg, weights, tape);
  return tape.value(b.flownet_c(tape.constant(reference), tape.constant(deformed)));
}

TensorF flownet_s_forward(const NetworkConfig& cfg, const NetworkWeights& weights, const TensorF& stacked) {
  Tape<float> tape;
  CascadeBuilder b(cfg, weights, tape);
  return tape.value(b.flownet_s(tape.constant(stacked)));
}

TensorF edge_head_forward(const NetworkConfig& cfg, const NetworkWeights& weights,
                          std::span<const TensorF> expanding_features) {
  Tape<float> tape;
  CascadeBuilder b(cfg, weights, tape);
  std::vector<VarId> ids;
  for (const auto& f : expanding_features) ids.push_back(tape.constant(f));
  return tape.value(tape.sigmoid(b.edge_head(ids)));
}

CascadeResult crackpropnet_forward(const NetworkConfig& cfg, const NetworkWeights& weights, const TensorF& reference,
                                   const TensorF& deformed) {
  Tape<float> tape;
  CascadeBuilder b(cfg, weights, tape);
  const CascadeVars v = b.forward(tape.constant(reference), tape.constant(deformed));
  return {tape.value(v.flow1), tape.value(v.flow2), tape.value(v.edge_prob)};
}

}  // namespace cpn::net
