#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordistill/attention.hpp"
#include "ordistill/backbone.hpp"
#include "ordistill/dataset.hpp"

namespace ordistill {

/// What gets averaged across ensemble members.
enum class EnsembleMode { Probabilities, Logits };

const char* to_string(EnsembleMode mode);
EnsembleMode ensemble_mode_from_string(const std::string& name);

inline constexpr std::size_t kEvalBatch = 64;

/// Row-major [n, K] softmax probabilities (or raw logits) of one model.
template <typename T>
std::vector<double> class_scores(const Model<T>& model, std::span<const LabeledImage> images,
                                 EnsembleMode mode = EnsembleMode::Probabilities);

/// Argmax per row; ties go to the lowest class index.
std::vector<int> argmax_rows(std::span<const double> scores, std::size_t num_classes);

/// Mean of per-model score rows, in member order.
std::vector<double> average_scores(const std::vector<std::vector<double>>& per_model);

template <typename T>
std::vector<int> ensemble_predict(std::span<const Model<T>* const> models,
                                  std::span<const LabeledImage> images,
                                  EnsembleMode mode = EnsembleMode::Probabilities);

double top1_accuracy(std::span<const int> predictions, std::span<const int> labels);

std::vector<int> labels_of(std::span<const LabeledImage> images);

/// or_loss(teacher_map(a), student_map(b)) for two normalized maps.
template <typename T>
double attention_overlap_maps(const AttentionMap<T>& normalized_teacher,
                              const AttentionMap<T>& normalized_student);

/// Mean over the images of the orthogonal loss between the teacher-style
/// map of `teacher` and the student-style map of `student`. Asymmetric.
template <typename T>
double attention_overlap(const Model<T>& teacher, const Model<T>& student,
                         std::span<const LabeledImage> images);

struct EnsembleResult {
    std::vector<double> model_accuracy;
    double ensemble_accuracy = 0;
    std::vector<std::vector<double>> overlap;  // [teacher][student]; empty if not computed
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const;
    std::string overlap_csv() const;
};

/// Per-model and ensemble accuracy plus, when requested, the full overlap matrix.
template <typename T>
EnsembleResult evaluate_ensemble(std::span<const Model<T>* const> models,
                                 std::span<const LabeledImage> images, EnsembleMode mode,
                                 bool with_overlap);

}  // namespace ordistill
