#include "ordistill/losses.hpp"

#include <cmath>
#include <string>

#include "ordistill/ops.hpp"

namespace ordistill {

namespace {

void check_alpha(double alpha) {
    if (!(alpha >= 0) || !std::isfinite(alpha)) {
        fail(ErrorKind::Config, "alpha must be a finite non-negative number, got " + std::to_string(alpha));
    }
}

}  // namespace

double LossBreakdown::or_mean() const {
    if (or_terms.empty()) return 0;
    double acc = 0;
    for (double v : or_terms) acc += v;
    return acc / static_cast<double>(or_terms.size());
}

template <typename T>
Tensor<T> or_loss(const AttentionMap<T>& teacher, const AttentionMap<T>& student) {
    if (teacher.stage != AttentionStage::Teacher || student.stage != AttentionStage::Student) {
        fail(ErrorKind::Contract, std::string("or_loss expects (teacher, student) maps, got (") +
                                      to_string(teacher.stage) + ", " + to_string(student.stage) + ")");
    }
    if (teacher.values.shape() != student.values.shape()) {
        fail(ErrorKind::Shape, "or_loss: teacher map " + shape_str(teacher.values.shape()) +
                                   " vs student map " + shape_str(student.values.shape()));
    }
    if (teacher.values.requires_grad()) {
        fail(ErrorKind::Contract, "or_loss: teacher map must be detached");
    }
    return ops::mean(ops::broadcast_mul(teacher.values, student.values));
}

template <typename T>
Tensor<T> total_objective(const Tensor<T>& ce, const std::vector<Tensor<T>>& or_terms, double alpha) {
    check_alpha(alpha);
    if (or_terms.empty()) return ce;
    Tensor<T> acc = or_terms.front();
    for (std::size_t i = 1; i < or_terms.size(); ++i) acc = ops::add(acc, or_terms[i]);
    const T weight = static_cast<T>(alpha / static_cast<double>(or_terms.size()));
    return ops::add(ce, ops::scalar_mul(acc, weight));
}

LossBreakdown total_loss(double ce, std::vector<double> or_terms, double alpha) {
    check_alpha(alpha);
    LossBreakdown out;
    out.ce = ce;
    out.alpha = alpha;
    out.total = ce;
    if (!or_terms.empty()) {
        double acc = 0;
        for (double v : or_terms) acc += v;
        out.total = ce + alpha / static_cast<double>(or_terms.size()) * acc;
    }
    out.or_terms = std::move(or_terms);
    return out;
}

#define ORDISTILL_INSTANTIATE(T)                                                      \
    template Tensor<T> or_loss<T>(const AttentionMap<T>&, const AttentionMap<T>&);    \
    template Tensor<T> total_objective<T>(const Tensor<T>&, const std::vector<Tensor<T>>&, double);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
