#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordistill/backbone.hpp"
#include "ordistill/checkpoint.hpp"
#include "ordistill/dataset.hpp"
#include "ordistill/ensemble.hpp"
#include "ordistill/losses.hpp"

namespace ordistill {

enum class Precision { Float32, Float64 };

const char* to_string(Precision precision);
Precision precision_from_string(const std::string& name);

struct TrainRunConfig {
    std::size_t n_models = 5;
    double alpha = kDefaultAlpha;
    std::size_t epochs = 30;
    double warmup_fraction = 1.0 / 3.0;  // share of student epochs optimized with CE only
    std::size_t batch_size = 8;
    double lr_feature = 0.001;
    double lr_classifier = 0.01;
    double lr_scale = 10.0;  // shared multiplier on both groups for from-scratch training
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double grad_clip = 5;  // max joint L2 norm of all gradients per step; 0 disables
    std::string schedule = "cosine";
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds;  // one per model; derived from `seed` when empty
    std::filesystem::path data_dir;
    Precision precision = Precision::Float32;
    bool augment = true;
    EnsembleMode ensemble_mode = EnsembleMode::Probabilities;
    std::vector<std::size_t> stage_channels{16, 32, 64};
    std::size_t blocks_per_stage = 1;
    std::size_t threads = 1;

    /// seeds[n-1] for the 1-based model index n.
    std::uint64_t model_seed(std::size_t model_index) const;
    /// floor(warmup_fraction * epochs)
    std::size_t warmup_epochs() const;
    void validate() const;
};

/// Learning-rate multiplier schedule: 0.5 * lr0 * (1 + cos(pi * epoch / total)).
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0);

/// In-place SGD with momentum and L2 weight decay on one parameter:
///   g = grad + wd * p;  v = momentum * v + g;  p -= lr * v
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
              double momentum, double weight_decay);

template <typename T>
class SgdOptimizer {
public:
    explicit SgdOptimizer(const Model<T>& model);

    /// Applies one step to every parameter, using lr_feature for the
    /// feature extractor and lr_classifier for the classifier. Throws
    /// ErrorKind::Numeric naming the parameter if its gradient is non-finite.
    void step(Model<T>& model, double lr_feature, double lr_classifier, double momentum,
              double weight_decay);

    std::uint64_t steps() const { return steps_; }
    const std::vector<std::vector<T>>& velocity() const { return velocity_; }

private:
    std::vector<std::vector<T>> velocity_;
    std::uint64_t steps_ = 0;
};

/// Scales every gradient of `model` so their joint L2 norm is at most
/// max_norm. Returns the norm before scaling.
template <typename T>
double clip_grad_norm(Model<T>& model, double max_norm);

struct StepRecord {
    std::uint64_t step = 0;
    std::size_t model_index = 1;
    LossBreakdown loss;
    double lr = 0;
};

/// `step,model_index,ce,or_mean,total,lr`; or_mean is empty for a model
/// trained without teachers.
std::string training_log_csv(std::span<const StepRecord> records);

struct TrainingData {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
    std::size_t num_classes = 0;
    std::size_t image_size = 0;

    static TrainingData load(const std::filesystem::path& dir);
};

template <typename T>
struct TrainedMember {
    Model<T> model;
    CheckpointInfo info;
    std::vector<StepRecord> log;
};

/// Observer invoked after every optimizer step.
using StepObserver = std::function<void(const StepRecord&)>;

BackboneConfig backbone_for(const TrainRunConfig& config, const TrainingData& data, std::size_t model_index);

/// Trains model `model_index` (1-based) against the given frozen teachers
/// (models 1..model_index-1). Teachers are only read.
template <typename T>
TrainedMember<T> train_member(const TrainRunConfig& config, const TrainingData& data,
                              std::size_t model_index, std::span<const Model<T>* const> teachers,
                              const StepObserver& observer = {});

struct RunSummary {
    nlohmann::json json;
    std::vector<std::filesystem::path> checkpoints;
};

/// Full sequential protocol: writes model_NN.ckpt, train_log_NN.csv,
/// config.json and summary.json under out_dir. Verifies after every student
/// phase that all teacher checkpoints and parameters are bitwise unchanged.
RunSummary train_sequence(const TrainRunConfig& config, const std::filesystem::path& out_dir,
                          const nlohmann::json& config_echo = nlohmann::json::object());

}  // namespace ordistill
