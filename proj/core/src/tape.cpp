#include "cpn/tape.hpp"

#include <utility>

#include "cpn/error.hpp"
#include "cpn/ops.hpp"

namespace cpn {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kDeconv2d: return "deconv2d";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kCorrelate: return "correlate";
    case OpKind::kWarp: return "warp";
    case OpKind::kBrightnessError: return "brightness_error";
    case OpKind::kUpsampleBilinear: return "upsample_bilinear";
    case OpKind::kConcat: return "concat";
    case OpKind::kScale: return "scale";
  }
  return "unknown";
}

template <typename T>
VarId Tape<T>::push(Tensor<T> value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return VarId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
VarId Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false);
}

template <typename T>
VarId Tape<T>::variable(Tensor<T> value) {
  return push(std::move(value), true);
}

template <typename T>
VarId Tape<T>::parameter(const Tensor<T>& value) {
  Node node;
  node.borrowed = &value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return VarId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Tape<T>::value(VarId id) const {
  const Node& n = nodes_.at(id.index);
  return n.borrowed ? *n.borrowed : *n.owned;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(VarId id) const {
  return nodes_.at(id.index).grad;
}

template <typename T>
Tensor<T> Tape<T>::compute(const OpRecord& rec) const {
  const auto& in = rec.inputs;
  const auto& p = rec.params;
  static const Tensor<T> kNone;
  switch (rec.kind) {
    case OpKind::kConv2d:
      return ops::conv2d(value(in[0]), value(in[1]), in.size() > 2 ? value(in[2]) : kNone, p.stride, p.padding);
    case OpKind::kDeconv2d:
      return ops::deconv2d(value(in[0]), value(in[1]), in.size() > 2 ? value(in[2]) : kNone, p.stride, p.padding);
    case OpKind::kLeakyRelu: return ops::leaky_relu(value(in[0]), static_cast<T>(p.slope));
    case OpKind::kSigmoid: return ops::sigmoid(value(in[0]));
    case OpKind::kCorrelate:
      return ops::correlate(value(in[0]), value(in[1]), p.patch_radius, p.displacement_radius);
    case OpKind::kWarp: return ops::warp(value(in[0]), value(in[1]));
    case OpKind::kBrightnessError: return ops::brightness_error(value(in[0]), value(in[1]));
    case OpKind::kUpsampleBilinear: return ops::upsample_bilinear(value(in[0]), p.factor);
    case OpKind::kConcat: {
      std::vector<const Tensor<T>*> parts;
      for (VarId id : in) parts.push_back(&value(id));
      return ops::concat<T>(parts);
    }
    case OpKind::kScale: return ops::scale(value(in[0]), static_cast<T>(p.scale));
  }
  throw ShapeError("unknown op kind");
}

template <typename T>
VarId Tape<T>::record(OpKind kind, std::vector<VarId> inputs, OpParams params) {
  bool needs = false;
  for (VarId id : inputs) needs = needs || nodes_.at(id.index).requires_grad;
  OpRecord rec{kind, std::move(inputs), VarId{}, params};
  Tensor<T> out = compute(rec);
  rec.output = push(std::move(out), needs);
  records_.push_back(std::move(rec));
  return records_.back().output;
}

template <typename T>
VarId Tape<T>::conv2d(VarId input, VarId weights, VarId bias, int stride, int padding) {
  std::vector<VarId> in{input, weights};
  if (bias.valid()) in.push_back(bias);
  OpParams p;
  p.stride = stride;
  p.padding = padding;
  return record(OpKind::kConv2d, std::move(in), p);
}

template <typename T>
VarId Tape<T>::deconv2d(VarId input, VarId weights, VarId bias, int stride, int padding) {
  std::vector<VarId> in{input, weights};
  if (bias.valid()) in.push_back(bias);
  OpParams p;
  p.stride = stride;
  p.padding = padding;
  return record(OpKind::kDeconv2d, std::move(in), p);
}

template <typename T>
VarId Tape<T>::leaky_relu(VarId input, double slope) {
  OpParams p;
  p.slope = slope;
  return record(OpKind::kLeakyRelu, {input}, p);
}

template <typename T>
VarId Tape<T>::sigmoid(VarId input) {
  return record(OpKind::kSigmoid, {input}, {});
}

template <typename T>
VarId Tape<T>::correlate(VarId f1, VarId f2, int k, int d) {
  OpParams p;
  p.patch_radius = k;
  p.displacement_radius = d;
  return record(OpKind::kCorrelate, {f1, f2}, p);
}

template <typename T>
VarId Tape<T>::warp(VarId image, VarId flow) {
  return record(OpKind::kWarp, {image, flow}, {});
}

template <typename T>
VarId Tape<T>::brightness_error(VarId warped, VarId reference) {
  return record(OpKind::kBrightnessError, {warped, reference}, {});
}

template <typename T>
VarId Tape<T>::upsample_bilinear(VarId input, int factor) {
  OpParams p;
  p.factor = factor;
  return record(OpKind::kUpsampleBilinear, {input}, p);
}

template <typename T>
VarId Tape<T>::concat(std::span<const VarId> parts) {
  return record(OpKind::kConcat, std::vector<VarId>(parts.begin(), parts.end()), {});
}

template <typename T>
VarId Tape<T>::scale(VarId input, double factor) {
  OpParams p;
  p.scale = factor;
  return record(OpKind::kScale, {input}, p);
}

template <typename T>
void Tape<T>::accumulate(VarId id, Tensor<T>&& g) {
  Node& n = nodes_.at(id.index);
  if (!n.requires_grad || g.empty()) return;
  if (n.grad.empty()) {
    n.grad = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <typename T>
void Tape<T>::propagate(const OpRecord& rec) {
  const Tensor<T>& gout = nodes_[rec.output.index].grad;
  if (gout.empty()) return;
  const auto& in = rec.inputs;
  const auto& p = rec.params;
  auto needs = [&](std::size_t i) { return nodes_[in[i].index].requires_grad; };
  switch (rec.kind) {
    case OpKind::kConv2d: {
      auto g = ops::conv2d_backward(value(in[0]), value(in[1]), in.size() > 2, gout, p.stride, p.padding, needs(0));
      accumulate(in[0], std::move(g.input));
      accumulate(in[1], std::move(g.weights));
      if (in.size() > 2) accumulate(in[2], std::move(g.bias));
      break;
    }
    case OpKind::kDeconv2d: {
      auto g = ops::deconv2d_backward(value(in[0]), value(in[1]), in.size() > 2, gout, p.stride, p.padding, needs(0));
      accumulate(in[0], std::move(g.input));
      accumulate(in[1], std::move(g.weights));
      if (in.size() > 2) accumulate(in[2], std::move(g.bias));
      break;
    }
    case OpKind::kLeakyRelu:
      accumulate(in[0], ops::leaky_relu_backward(value(in[0]), gout, static_cast<T>(p.slope)));
      break;
    case OpKind::kSigmoid:
      accumulate(in[0], ops::sigmoid_backward(value(rec.output), gout));
      break;
    case OpKind::kCorrelate: {
      auto [g1, g2] = ops::correlate_backward(value(in[0]), value(in[1]), gout, p.patch_radius,
                                              p.displacement_radius);
      accumulate(in[0], std::move(g1));
      accumulate(in[1], std::move(g2));
      break;
    }
    case OpKind::kWarp: {
      auto [gi, gf] = ops::warp_backward(value(in[0]), value(in[1]), gout);
      accumulate(in[0], std::move(gi));
      accumulate(in[1], std::move(gf));
      break;
    }
    case OpKind::kBrightnessError: {
      auto [gw, gr] = ops::brightness_error_backward(value(in[0]), value(in[1]), gout);
      accumulate(in[0], std::move(gw));
      accumulate(in[1], std::move(gr));
      break;
    }
    case OpKind::kUpsampleBilinear:
      accumulate(in[0], ops::upsample_bilinear_backward(gout, value(in[0]).shape(), p.factor));
      break;
    case OpKind::kConcat: {
      std::vector<Shape> shapes;
      for (VarId id : in) shapes.push_back(value(id).shape());
      auto parts = ops::concat_backward(gout, std::span<const Shape>(shapes));
      for (std::size_t i = 0; i < in.size(); ++i) accumulate(in[i], std::move(parts[i]));
      break;
    }
    case OpKind::kScale:
      accumulate(in[0], ops::scale(gout, static_cast<T>(p.scale)));
      break;
  }
}

template <typename T>
void Tape<T>::backward(VarId root, const Tensor<T>& seed) {
  const std::pair<VarId, const Tensor<T>*> one{root, &seed};
  backward(std::span<const std::pair<VarId, const Tensor<T>*>>(&one, 1));
}

template <typename T>
void Tape<T>::backward(std::span<const std::pair<VarId, const Tensor<T>*>> seeds) {
  for (auto& n : nodes_) n.grad = Tensor<T>();
  for (const auto& [id, seed] : seeds) {
    if (seed->shape() != value(id).shape())
      throw ShapeError("backward: seed shape " + seed->shape().str() + " does not match " + value(id).shape().str());
    Tensor<T> copy = *seed;
    accumulate(id, std::move(copy));
  }
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    propagate(*it);
    // Intermediate gradients are dead once propagated.
    if (nodes_[it->output.index].owned) nodes_[it->output.index].grad = Tensor<T>();
  }
}

template <typename T>
void Tape<T>::replay() {
  for (const auto& rec : records_) nodes_[rec.output.index].owned = compute(rec);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cpn
