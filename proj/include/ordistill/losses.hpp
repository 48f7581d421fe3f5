#pragma once

#include <vector>

#include "ordistill/attention.hpp"

namespace ordistill {

inline constexpr double kDefaultAlpha = 0.5;

struct LossBreakdown {
    double ce = 0;
    std::vector<double> or_terms;  // one per teacher, in teacher-index order
    double alpha = 0;
    double total = 0;

    /// Mean of or_terms, 0 when there are none.
    double or_mean() const;
};

/// Orthogonal loss: mean over batch and positions of teacher * student.
template <typename T>
Tensor<T> or_loss(const AttentionMap<T>& teacher, const AttentionMap<T>& student);

/// ce + alpha / (N-1) * sum(or_terms); N-1 = or_terms.size(). Differentiable.
template <typename T>
Tensor<T> total_objective(const Tensor<T>& ce, const std::vector<Tensor<T>>& or_terms, double alpha);

/// Scalar form of total_objective.
LossBreakdown total_loss(double ce, std::vector<double> or_terms, double alpha);

}  // namespace ordistill
