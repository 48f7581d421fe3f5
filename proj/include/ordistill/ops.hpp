#pragma once

#include <cstddef>
#include <span>

#include "ordistill/tensor.hpp"

// Differentiable primitives. Each op records itself on the thread's active
// tape when at least one input requires a gradient, and throws
// ErrorKind::Numeric when it produces a non-finite value.

namespace ordistill::ops {

struct Conv2dParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// input [B,Cin,H,W] * weight [Cout,Cin,kH,kW] (+ bias [Cout]) -> [B,Cout,H',W'], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dParams params = {});
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, Conv2dParams params = {});

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel = 2, std::size_t stride = 2);

/// [B,C,H,W] -> [B,C,1,1], mean over each channel plane.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

/// [B,C,H,W] -> [B,1,H,W], mean across channels at each location.
template <typename T>
Tensor<T> channel_avg_pool(const Tensor<T>& input);

// Broadcasting binary ops: operands are aligned on trailing axes (missing
// leading axes count as 1); each axis pair must be equal or contain a 1.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> broadcast_mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);

/// max(x, 0); derivative at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> clamp_min0(const Tensor<T>& a) {
    return relu(a);
}
/// |x|; derivative at 0 is 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& a);
/// sqrt(x) for x >= 0; derivative at 0 is taken as 0.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a);

/// x [B,In], weight [Out,In], bias [Out] -> [B,Out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Full reductions to a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax of [B,K] logits. Not recorded.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace ordistill::ops
