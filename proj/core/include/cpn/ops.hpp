#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cpn/tensor.hpp"

/// Forward and backward kernels for every operation in the CrackPropNet graph.
///
/// Image-like operands are N x C x H x W; the unbatched C x H x W form is
/// accepted wherever it is unambiguous and the result keeps the input rank.
/// All kernels are pure functions of their arguments.
namespace cpn::ops {

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Cross-correlation of `input` (N x C x H x W) with `weights` (O x C x kh x kw)
/// plus `bias` (O). An empty bias means no bias term.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int stride,
                 int padding);
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, bool has_bias,
                             const Tensor<T>& grad_out, int stride, int padding, bool need_input_grad = true);

/// Transposed convolution. `weights` is Cin x Cout x kh x kw; the output side
/// is (H - 1) * stride - 2 * padding + kh.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int stride,
                   int padding);
template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, bool has_bias,
                               const Tensor<T>& grad_out, int stride, int padding,
                               bool need_input_grad = true);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out, T slope);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);
/// Backward from the forward *output* y: grad * y * (1 - y).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

/// Patch correlation of two feature maps over a (2d+1)^2 displacement
/// neighbourhood with (2k+1)^2 patches. Output channel q = (dy + d) * D + (dx + d).
/// Patch positions outside the maps contribute zero.
template <typename T>
Tensor<T> correlate(const Tensor<T>& f1, const Tensor<T>& f2, int k, int d);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> correlate_backward(const Tensor<T>& f1, const Tensor<T>& f2,
                                                   const Tensor<T>& grad_out, int k, int d);

/// Bilinear backward warp: out(x, y) = image(x + u, y + v), zero outside.
/// Flow channel 0 is u (columns), channel 1 is v (rows), both in pixels.
template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& flow);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> warp_backward(const Tensor<T>& image, const Tensor<T>& flow,
                                              const Tensor<T>& grad_out);

/// Per-pixel Euclidean norm over channels of (warped - reference); one channel out.
template <typename T>
Tensor<T> brightness_error(const Tensor<T>& warped, const Tensor<T>& reference);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> brightness_error_backward(const Tensor<T>& warped, const Tensor<T>& reference,
                                                          const Tensor<T>& grad_out);

/// Bilinear upsampling by an integer factor, half-pixel centres (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int factor);
template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, const Shape& input_shape, int factor);

/// Channel-axis stacking in argument order.
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts);
template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out, std::span<const Shape> part_shapes);

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor);

/// Output side of a convolution; throws ShapeError when the kernel does not fit.
std::size_t conv_out_size(std::size_t in, std::size_t kernel, int stride, int padding);
std::size_t deconv_out_size(std::size_t in, std::size_t kernel, int stride, int padding);

}  // namespace cpn::ops
