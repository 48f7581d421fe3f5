#pragma once

#include "ordistill/tensor.hpp"

namespace ordistill {

enum class AttentionStage { Raw, Normalized, Teacher, Student };

const char* to_string(AttentionStage stage);

/// Spatial attention map [B,1,H,W] tagged with the transform it has been
/// through and the (1-based) index of the model that produced it.
template <typename T>
struct AttentionMap {
    Tensor<T> values;
    AttentionStage stage = AttentionStage::Raw;
    int source_model = 0;
};

inline constexpr double kNormalizeEpsilon = 1e-5;

/// CAP(GAP(F) * F): channel importance weighted features averaged over channels.
template <typename T>
AttentionMap<T> spatial_attention(const Tensor<T>& features, int source_model = 0);

/// Per-sample standardization (M - mean) / (std + eps) with the population
/// standard deviation over the H*W plane. Constant maps become zero.
template <typename T>
AttentionMap<T> normalize(const AttentionMap<T>& raw, double epsilon = kNormalizeEpsilon);

/// |M_norm|, detached from any gradient history.
template <typename T>
AttentionMap<T> teacher_map(const AttentionMap<T>& normalized);

/// max(M_norm, 0), differentiable.
template <typename T>
AttentionMap<T> student_map(const AttentionMap<T>& normalized);

}  // namespace ordistill
