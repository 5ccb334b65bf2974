#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cpn/tensor.hpp"

namespace cpn {

/// Handle to a value recorded on a Tape.
struct VarId {
  std::uint32_t index = UINT32_MAX;
  bool valid() const noexcept { return index != UINT32_MAX; }
  friend bool operator==(VarId, VarId) = default;
};

enum class OpKind : std::uint8_t {
  kConv2d,
  kDeconv2d,
  kLeakyRelu,
  kSigmoid,
  kCorrelate,
  kWarp,
  kBrightnessError,
  kUpsampleBilinear,
  kConcat,
  kScale,
};

std::string_view op_name(OpKind kind);

struct OpParams {
  int stride = 1;
  int padding = 0;
  double slope = 0.0;
  int patch_radius = 0;         // correlation k
  int displacement_radius = 0;  // correlation d
  int factor = 1;
  double scale = 1.0;
};

/// One recorded operation. Inputs of conv-like ops are (input, weights[, bias]).
struct OpRecord {
  OpKind kind;
  std::vector<VarId> inputs;
  VarId output;
  OpParams params;
};

/// Records a forward pass and runs reverse-mode differentiation over it.
///
/// Leaves are either owned constants or borrowed parameters; borrowed tensors
/// must outlive the tape. Replaying the records recomputes every non-leaf value
/// from the current leaves.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  VarId constant(Tensor<T> value);
  /// Borrowed leaf that accumulates a gradient.
  VarId parameter(const Tensor<T>& value);
  /// Owned leaf that accumulates a gradient.
  VarId variable(Tensor<T> value);

  VarId conv2d(VarId input, VarId weights, VarId bias, int stride, int padding);
  /// `bias` may be an invalid VarId.
  VarId deconv2d(VarId input, VarId weights, VarId bias, int stride, int padding);
  VarId leaky_relu(VarId input, double slope);
  VarId sigmoid(VarId input);
  VarId correlate(VarId f1, VarId f2, int k, int d);
  VarId warp(VarId image, VarId flow);
  VarId brightness_error(VarId warped, VarId reference);
  VarId upsample_bilinear(VarId input, int factor);
  VarId concat(std::span<const VarId> parts);
  VarId scale(VarId input, double factor);

  const Tensor<T>& value(VarId id) const;
  /// Gradient of the last backward() root with respect to `id`; empty when
  /// the value does not require a gradient or received none.
  const Tensor<T>& grad(VarId id) const;
  bool requires_grad(VarId id) const { return nodes_.at(id.index).requires_grad; }

  /// Seeds d(root) = seed and propagates through the records in reverse.
  void backward(VarId root, const Tensor<T>& seed);
  /// Seeds several outputs at once (e.g. edge logits and supervised flows).
  void backward(std::span<const std::pair<VarId, const Tensor<T>*>> seeds);
  void replay();

  std::span<const OpRecord> records() const noexcept { return records_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::optional<Tensor<T>> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
  };

  VarId push(Tensor<T> value, bool requires_grad);
  VarId record(OpKind kind, std::vector<VarId> inputs, OpParams params);
  Tensor<T> compute(const OpRecord& rec) const;
  void accumulate(VarId id, Tensor<T>&& g);
  void propagate(const OpRecord& rec);

  std::vector<Node> nodes_;
  std::vector<OpRecord> records_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cpn
