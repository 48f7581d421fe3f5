#include "ordistill/ensemble.hpp"

#include <algorithm>
#include <cstdio>

#include "ordistill/losses.hpp"
#include "ordistill/ops.hpp"

namespace ordistill {

namespace {

template <typename T>
void check_members(std::span<const Model<T>* const> models) {
    if (models.empty()) fail(ErrorKind::Contract, "ensemble needs at least one model");
    const std::size_t k = models.front()->config().num_classes;
    for (const Model<T>* m : models) {
        if (m->mode() != ModelMode::Eval) fail(ErrorKind::Contract, "ensemble members must be in eval mode");
        if (m->config().num_classes != k) {
            fail(ErrorKind::Contract, "ensemble members disagree on num_classes");
        }
    }
}

// Normalized attention maps of `model` for all images, batch by batch.
template <typename T>
std::vector<AttentionMap<T>> normalized_maps(const Model<T>& model, std::span<const LabeledImage> images) {
    NoGradScope<T> no_grad;
    std::vector<AttentionMap<T>> maps;
    for (std::size_t start = 0; start < images.size(); start += kEvalBatch) {
        const auto chunk = images.subspan(start, std::min(kEvalBatch, images.size() - start));
        const auto out = model.forward(make_batch<T>(chunk));
        maps.push_back(normalize(spatial_attention(out.features)));
    }
    return maps;
}

template <typename T>
double overlap_from_cache(const std::vector<AttentionMap<T>>& teacher,
                          const std::vector<AttentionMap<T>>& student, std::size_t count) {
    double acc = 0;
    for (std::size_t b = 0; b < teacher.size(); ++b) {
        const double batch = static_cast<double>(teacher[b].values.extent(0));
        acc += attention_overlap_maps(teacher[b], student[b]) * batch;
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace

const char* to_string(EnsembleMode mode) {
    return mode == EnsembleMode::Logits ? "logits" : "probabilities";
}

EnsembleMode ensemble_mode_from_string(const std::string& name) {
    if (name == "probabilities") return EnsembleMode::Probabilities;
    if (name == "logits") return EnsembleMode::Logits;
    fail(ErrorKind::Config, "ensemble_mode must be 'probabilities' or 'logits', got '" + name + "'");
}

template <typename T>
std::vector<double> class_scores(const Model<T>& model, std::span<const LabeledImage> images,
                                 EnsembleMode mode) {
    NoGradScope<T> no_grad;
    std::vector<double> scores;
    scores.reserve(images.size() * model.config().num_classes);
    for (std::size_t start = 0; start < images.size(); start += kEvalBatch) {
        const auto chunk = images.subspan(start, std::min(kEvalBatch, images.size() - start));
        const auto out = model.forward(make_batch<T>(chunk));
        const Tensor<T> rows = mode == EnsembleMode::Probabilities ? ops::softmax(out.logits) : out.logits;
        scores.insert(scores.end(), rows.values().begin(), rows.values().end());
    }
    return scores;
}

std::vector<int> argmax_rows(std::span<const double> scores, std::size_t num_classes) {
    std::vector<int> out(scores.size() / num_classes);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const auto row = scores.subspan(r * num_classes, num_classes);
        out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

std::vector<double> average_scores(const std::vector<std::vector<double>>& per_model) {
    if (per_model.empty()) fail(ErrorKind::Contract, "average_scores: no members");
    std::vector<double> mean(per_model.front().size(), 0.0);
    for (const auto& s : per_model) {
        if (s.size() != mean.size()) fail(ErrorKind::Contract, "average_scores: size mismatch");
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i];
    }
    for (double& v : mean) v /= static_cast<double>(per_model.size());
    return mean;
}

template <typename T>
std::vector<int> ensemble_predict(std::span<const Model<T>* const> models,
                                  std::span<const LabeledImage> images, EnsembleMode mode) {
    check_members(models);
    std::vector<std::vector<double>> per_model;
    for (const Model<T>* m : models) per_model.push_back(class_scores(*m, images, mode));
    return argmax_rows(average_scores(per_model), models.front()->config().num_classes);
}

double top1_accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.empty()) fail(ErrorKind::Contract, "top1_accuracy of an empty set");
    if (predictions.size() != labels.size()) {
        fail(ErrorKind::Contract, "top1_accuracy: prediction and label counts differ");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> labels_of(std::span<const LabeledImage> images) {
    std::vector<int> labels;
    labels.reserve(images.size());
    for (const auto& img : images) labels.push_back(img.label);
    return labels;
}

template <typename T>
double attention_overlap_maps(const AttentionMap<T>& normalized_teacher,
                              const AttentionMap<T>& normalized_student) {
    NoGradScope<T> no_grad;
    return static_cast<double>(
        or_loss(teacher_map(normalized_teacher), student_map(normalized_student)).item());
}

template <typename T>
double attention_overlap(const Model<T>& teacher, const Model<T>& student,
                         std::span<const LabeledImage> images) {
    return overlap_from_cache(normalized_maps(teacher, images), normalized_maps(student, images),
                              images.size());
}

nlohmann::json EnsembleResult::to_json() const {
    return {{"model_accuracy", model_accuracy},
            {"ensemble_accuracy", ensemble_accuracy},
            {"overlap", overlap},
            {"config", config}};
}

std::string EnsembleResult::overlap_csv() const {
    std::string out = "teacher,student,overlap\n";
    char buf[96];
    for (std::size_t i = 0; i < overlap.size(); ++i) {
        for (std::size_t j = 0; j < overlap[i].size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g\n", i + 1, j + 1, overlap[i][j]);
            out += buf;
        }
    }
    return out;
}

template <typename T>
EnsembleResult evaluate_ensemble(std::span<const Model<T>* const> models,
                                 std::span<const LabeledImage> images, EnsembleMode mode,
                                 bool with_overlap) {
    check_members(models);
    const auto labels = labels_of(images);
    const std::size_t k = models.front()->config().num_classes;
    EnsembleResult result;
    std::vector<std::vector<double>> per_model;
    for (const Model<T>* m : models) {
        per_model.push_back(class_scores(*m, images, mode));
        result.model_accuracy.push_back(top1_accuracy(argmax_rows(per_model.back(), k), labels));
    }
    result.ensemble_accuracy = top1_accuracy(argmax_rows(average_scores(per_model), k), labels);
    if (with_overlap) {
        std::vector<std::vector<AttentionMap<T>>> maps;
        for (const Model<T>* m : models) maps.push_back(normalized_maps(*m, images));
        result.overlap.assign(models.size(), std::vector<double>(models.size(), 0.0));
        for (std::size_t i = 0; i < models.size(); ++i) {
            for (std::size_t j = 0; j < models.size(); ++j) {
                result.overlap[i][j] = overlap_from_cache(maps[i], maps[j], images.size());
            }
        }
    }
    result.config = {{"ensemble_mode", to_string(mode)}, {"members", models.size()}, {"images", images.size()}};
    return result;
}

#define ORDISTILL_INSTANTIATE(T)                                                                      \
    template std::vector<double> class_scores<T>(const Model<T>&, std::span<const LabeledImage>,      \
                                                 EnsembleMode);                                       \
    template std::vector<int> ensemble_predict<T>(std::span<const Model<T>* const>,                   \
                                                  std::span<const LabeledImage>, EnsembleMode);       \
    template double attention_overlap_maps<T>(const AttentionMap<T>&, const AttentionMap<T>&);        \
    template double attention_overlap<T>(const Model<T>&, const Model<T>&,                            \
                                         std::span<const LabeledImage>);                              \
    template EnsembleResult evaluate_ensemble<T>(std::span<const Model<T>* const>,                    \
                                                 std::span<const LabeledImage>, EnsembleMode, bool);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
