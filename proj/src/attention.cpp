#include "ordistill/attention.hpp"

#include <algorithm>
#include <string>

#include "ordistill/ops.hpp"

namespace ordistill {

const char* to_string(AttentionStage stage) {
    switch (stage) {
        case AttentionStage::Raw: return "raw";
        case AttentionStage::Normalized: return "normalized";
        case AttentionStage::Teacher: return "teacher";
        case AttentionStage::Student: return "student";
    }
    return "unknown";
}

namespace {

template <typename T>
void expect_stage(const AttentionMap<T>& map, AttentionStage want, const char* op) {
    if (map.stage != want) {
        fail(ErrorKind::Contract, std::string(op) + " expects a " + to_string(want) +
                                      " attention map, got " + to_string(map.stage));
    }
}

}  // namespace

template <typename T>
AttentionMap<T> spatial_attention(const Tensor<T>& features, int source_model) {
    const Tensor<T> weights = ops::global_avg_pool(features);
    return {ops::channel_avg_pool(ops::broadcast_mul(weights, features)), AttentionStage::Raw,
            source_model};
}

template <typename T>
AttentionMap<T> normalize(const AttentionMap<T>& raw, double epsilon) {
    expect_stage(raw, AttentionStage::Raw, "normalize");
    const Tensor<T> centered = ops::sub(raw.values, ops::global_avg_pool(raw.values));
    const Tensor<T> variance = ops::global_avg_pool(ops::broadcast_mul(centered, centered));
    const Tensor<T> denom = ops::add_scalar(ops::sqrt(variance), static_cast<T>(epsilon));
    Tensor<T> out = ops::div(centered, denom);

    // Constant maps normalize to exact zeros.
    const auto& s = raw.values.shape();
    const std::size_t batch = s[0], plane = raw.values.numel() / s[0];
    const auto& v = raw.values.values();
    std::vector<T> keep(batch, T(1));
    bool any_constant = false;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto first = v.begin() + static_cast<std::ptrdiff_t>(b * plane);
        if (std::all_of(first, first + static_cast<std::ptrdiff_t>(plane), [&](T x) { return x == *first; })) {
            keep[b] = T(0);
            any_constant = true;
        }
    }
    if (any_constant) out = ops::broadcast_mul(Tensor<T>({batch, 1, 1, 1}, std::move(keep)), out);
    return {out, AttentionStage::Normalized, raw.source_model};
}

template <typename T>
AttentionMap<T> teacher_map(const AttentionMap<T>& normalized) {
    expect_stage(normalized, AttentionStage::Normalized, "teacher_map");
    return {ops::abs(normalized.values.detach()), AttentionStage::Teacher,
            normalized.source_model};
}

template <typename T>
AttentionMap<T> student_map(const AttentionMap<T>& normalized) {
    expect_stage(normalized, AttentionStage::Normalized, "student_map");
    return {ops::clamp_min0(normalized.values), AttentionStage::Student, normalized.source_model};
}

#define ORDISTILL_INSTANTIATE(T)                                                \
    template struct AttentionMap<T>;                                            \
    template AttentionMap<T> spatial_attention<T>(const Tensor<T>&, int);       \
    template AttentionMap<T> normalize<T>(const AttentionMap<T>&, double);      \
    template AttentionMap<T> teacher_map<T>(const AttentionMap<T>&);            \
    template AttentionMap<T> student_map<T>(const AttentionMap<T>&);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
