#include "ordistill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ordistill/hash.hpp"
#include "ordistill/ops.hpp"

namespace ordistill {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Batch order and augmentation draw from their own stream so that
// initialization and data order are independent.
std::uint64_t data_stream_seed(std::uint64_t model_seed) {
    return splitmix64(model_seed ^ 0xda7a5eedULL);
}

std::string model_file_stem(const char* prefix, std::size_t index) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s_%02zu", prefix, index);
    return buf;
}

template <typename T>
std::vector<AttentionMap<T>> teacher_maps(std::span<const Model<T>* const> teachers,
                                          const Tensor<T>& batch, std::size_t threads) {
    auto one = [&batch](const Model<T>* teacher, std::size_t index) {
        NoGradScope<T> no_grad;
        const auto out = teacher->forward(batch);
        return teacher_map(normalize(spatial_attention(out.features, static_cast<int>(index + 1))));
    };
    std::vector<AttentionMap<T>> maps;
    if (threads > 1 && teachers.size() > 1) {
        std::vector<std::future<AttentionMap<T>>> pending;
        for (std::size_t i = 0; i < teachers.size(); ++i) {
            pending.push_back(std::async(std::launch::async, one, teachers[i], i));
        }
        for (auto& f : pending) maps.push_back(f.get());
    } else {
        for (std::size_t i = 0; i < teachers.size(); ++i) maps.push_back(one(teachers[i], i));
    }
    return maps;
}

template <typename T>
double accuracy_of(const Model<T>& model, std::span<const LabeledImage> images) {
    const auto scores = class_scores(model, images, EnsembleMode::Logits);
    const auto labels = labels_of(images);
    return top1_accuracy(argmax_rows(scores, model.config().num_classes), labels);
}

struct TeacherFingerprint {
    std::string parameters;
    std::string file;
};

template <typename T>
RunSummary run_sequence(const TrainRunConfig& config, const TrainingData& data, const fs::path& out_dir,
                        const nlohmann::json& config_echo) {
    RunSummary summary;
    std::vector<Model<T>> models;
    models.reserve(config.n_models);
    nlohmann::json members = nlohmann::json::array();
    std::vector<std::vector<double>> test_scores;
    nlohmann::json prefix = nlohmann::json::array();
    const auto test_labels = labels_of(data.test);

    for (std::size_t n = 1; n <= config.n_models; ++n) {
        std::vector<const Model<T>*> teachers;
        std::vector<TeacherFingerprint> before;
        for (std::size_t t = 0; t < models.size(); ++t) {
            teachers.push_back(&models[t]);
            before.push_back({parameter_hash(models[t]), file_sha256(summary.checkpoints[t])});
        }

        TrainedMember<T> member = train_member<T>(config, data, n, teachers);

        for (std::size_t t = 0; t < models.size(); ++t) {
            const TeacherFingerprint after{parameter_hash(models[t]), file_sha256(summary.checkpoints[t])};
            if (after.parameters != before[t].parameters || after.file != before[t].file) {
                fail(ErrorKind::Contract, "teacher " + std::to_string(t + 1) + " changed while training model " +
                                              std::to_string(n));
            }
        }

        const fs::path ckpt = out_dir / (model_file_stem("model", n) + ".ckpt");
        save_checkpoint(ckpt, member.model, member.info);
        netpbm::write_bytes(out_dir / (model_file_stem("train_log", n) + ".csv"), training_log_csv(member.log));
        summary.checkpoints.push_back(ckpt);

        member.model.set_mode(ModelMode::Eval);
        test_scores.push_back(class_scores(member.model, data.test, config.ensemble_mode));
        const double ensemble_acc = top1_accuracy(argmax_rows(average_scores(test_scores), data.num_classes), test_labels);
        prefix.push_back({{"n_models", n}, {"test_accuracy", ensemble_acc}});

        nlohmann::json entry = member.info.metrics;
        entry["model_index"] = n;
        entry["checkpoint"] = ckpt.filename().string();
        entry["sha256"] = file_sha256(ckpt);
        members.push_back(entry);
        models.push_back(std::move(member.model));
    }

    summary.json = {{"config", config_echo},
                    {"precision", to_string(config.precision)},
                    {"models", members},
                    {"ensemble", prefix},
                    {"ensemble_test_accuracy", prefix.back().at("test_accuracy")}};
    netpbm::write_bytes(out_dir / "summary.json", summary.json.dump(2) + "\n");
    return summary;
}

}  // namespace

const char* to_string(Precision precision) {
    return precision == Precision::Float64 ? "float64" : "float32";
}

Precision precision_from_string(const std::string& name) {
    if (name == "float32") return Precision::Float32;
    if (name == "float64") return Precision::Float64;
    fail(ErrorKind::Config, "precision must be 'float32' or 'float64', got '" + name + "'");
}

std::size_t TrainRunConfig::warmup_epochs() const {
    return static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(epochs)));
}

std::uint64_t TrainRunConfig::model_seed(std::size_t model_index) const {
    if (model_index == 0) fail(ErrorKind::Contract, "model indices are 1-based");
    if (!seeds.empty()) {
        if (model_index > seeds.size()) fail(ErrorKind::Config, "no seed configured for model " + std::to_string(model_index));
        return seeds[model_index - 1];
    }
    return seed + model_index - 1;
}

void TrainRunConfig::validate() const {
    if (n_models < 1) fail(ErrorKind::Config, "n_models must be at least 1");
    if (!seeds.empty() && seeds.size() != n_models) {
        fail(ErrorKind::Config, "seeds lists " + std::to_string(seeds.size()) + " entries for " +
                                    std::to_string(n_models) + " models");
    }
    if (!(alpha >= 0) || !std::isfinite(alpha)) fail(ErrorKind::Config, "alpha must be non-negative");
    if (epochs < 1) fail(ErrorKind::Config, "epochs must be at least 1");
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) fail(ErrorKind::Config, "warmup_fraction must lie in [0, 1)");
    if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be at least 1");
    if (!(grad_clip >= 0) || !std::isfinite(grad_clip)) fail(ErrorKind::Config, "grad_clip must be non-negative");
    if (!(lr_feature > 0) || !(lr_classifier > 0) || !(lr_scale > 0)) {
        fail(ErrorKind::Config, "learning rates must be positive");
    }
    if (!(momentum >= 0 && momentum < 1)) fail(ErrorKind::Config, "momentum must lie in [0,1)");
    if (!(weight_decay >= 0)) fail(ErrorKind::Config, "weight_decay must be non-negative");
    if (schedule != "cosine") fail(ErrorKind::Config, "schedule must be 'cosine'");
    if (stage_channels.empty() || blocks_per_stage < 1) fail(ErrorKind::Config, "invalid backbone stages");
    if (threads < 1) fail(ErrorKind::Config, "threads must be at least 1");
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0) {
    if (total_epochs == 0 || epoch >= total_epochs) {
        fail(ErrorKind::Contract, "cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                                      std::to_string(total_epochs) + ")");
    }
    return 0.5 * lr0 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
}

template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
              double momentum, double weight_decay) {
    if (grad.size() != param.size() || velocity.size() != param.size()) {
        fail(ErrorKind::Shape, "sgd_step: parameter, gradient and velocity sizes differ");
    }
    const T lr_t = static_cast<T>(lr), mom = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i] + wd * param[i];
        velocity[i] = mom * velocity[i] + g;
        param[i] -= lr_t * velocity[i];
    }
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(const Model<T>& model) {
    for (const auto& p : model.parameters()) velocity_.emplace_back(p.second.numel(), T(0));
}

template <typename T>
void SgdOptimizer<T>::step(Model<T>& model, double lr_feature, double lr_classifier, double momentum,
                           double weight_decay) {
    auto& params = model.parameters();
    if (params.size() != velocity_.size()) fail(ErrorKind::Contract, "optimizer/model parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, tensor] = params[i];
        const std::vector<T> zeros = tensor.has_grad() ? std::vector<T>{} : std::vector<T>(tensor.numel(), T(0));
        const std::span<const T> grad = tensor.has_grad() ? tensor.grad() : std::span<const T>(zeros);
        for (T g : grad) {
            if (!std::isfinite(g)) fail(ErrorKind::Numeric, "non-finite gradient for parameter " + name);
        }
        const double lr = Model<T>::is_classifier_parameter(name) ? lr_classifier : lr_feature;
        sgd_step<T>(tensor.mutable_values(), grad, velocity_[i], lr, momentum, weight_decay);
    }
    ++steps_;
}

template <typename T>
double clip_grad_norm(Model<T>& model, double max_norm) {
    double sq = 0;
    for (auto& [name, tensor] : model.parameters()) {
        for (T g : tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& [name, tensor] : model.parameters()) {
            for (T& g : tensor.mutable_grad()) g *= scale;
        }
    }
    return norm;
}

std::string training_log_csv(std::span<const StepRecord> records) {
    std::string out = "step,model_index,ce,or_mean,total,lr\n";
    char buf[256];
    for (const auto& r : records) {
        char or_field[40] = "";
        if (!r.loss.or_terms.empty()) std::snprintf(or_field, sizeof(or_field), "%.9g", r.loss.or_mean());
        std::snprintf(buf, sizeof(buf), "%llu,%zu,%.9g,%s,%.9g,%.9g\n",
                      static_cast<unsigned long long>(r.step), r.model_index, r.loss.ce, or_field,
                      r.loss.total, r.lr);
        out += buf;
    }
    return out;
}

TrainingData TrainingData::load(const fs::path& dir) {
    if (dir.empty()) fail(ErrorKind::Io, "no dataset path configured (data_dir)");
    if (!fs::is_directory(dir)) fail(ErrorKind::Io, "dataset directory " + dir.string() + " not found");
    const auto manifest = read_manifest(dir);
    TrainingData data;
    data.train = ordistill::load(dir, "train");
    data.test = ordistill::load(dir, "test");
    data.num_classes = manifest.config.num_classes;
    data.image_size = manifest.config.image_size;
    return data;
}

BackboneConfig backbone_for(const TrainRunConfig& config, const TrainingData& data, std::size_t model_index) {
    BackboneConfig b;
    b.stage_channels = config.stage_channels;
    b.blocks_per_stage = config.blocks_per_stage;
    b.input_height = data.image_size;
    b.input_width = data.image_size;
    b.num_classes = data.num_classes;
    b.seed = config.model_seed(model_index);
    b.validate();
    return b;
}

template <typename T>
TrainedMember<T> train_member(const TrainRunConfig& config, const TrainingData& data,
                              std::size_t model_index, std::span<const Model<T>* const> teachers,
                              const StepObserver& observer) {
    config.validate();
    if (data.train.empty()) fail(ErrorKind::Contract, "empty training set");
    for (const Model<T>* t : teachers) {
        if (t->config().num_classes != data.num_classes) fail(ErrorKind::Contract, "teacher class count mismatch");
    }
    const BackboneConfig backbone = backbone_for(config, data, model_index);
    TrainedMember<T> member{Model<T>::init(backbone), {}, {}};
    Model<T>& model = member.model;
    model.set_mode(ModelMode::Train);
    SgdOptimizer<T> optimizer(model);
    std::mt19937_64 data_rng(data_stream_seed(backbone.seed));

    std::vector<std::size_t> order(data.train.size());
    std::vector<LabeledImage> batch_images;
    std::vector<int> batch_labels;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr_feature = cosine_lr(epoch, config.epochs, config.lr_feature * config.lr_scale);
        const double lr_classifier = cosine_lr(epoch, config.epochs, config.lr_classifier * config.lr_scale);
        const double alpha = epoch < config.warmup_epochs() ? 0.0 : config.alpha;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), data_rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch_images.clear();
            batch_labels.clear();
            for (std::size_t i = start; i < end; ++i) {
                const LabeledImage& img = data.train[order[i]];
                batch_images.push_back(config.augment ? augment(img, data_rng) : img);
                batch_labels.push_back(img.label);
            }
            const Tensor<T> batch = make_batch<T>(batch_images);
            ++step;

            StepRecord record;
            record.step = step;
            record.model_index = model_index;
            record.lr = lr_feature;
            try {
                const auto teacher = teacher_maps<T>(teachers, batch, config.threads);

                Tape<T> tape;
                TapeScope<T> scope(tape);
                for (auto& p : model.parameters()) p.second.zero_grad();
                const auto out = model.forward(batch);
                const Tensor<T> ce = ops::softmax_cross_entropy(out.logits, batch_labels);
                std::vector<Tensor<T>> or_terms;
                if (!teacher.empty()) {
                    const auto student = student_map(normalize(spatial_attention(out.features, static_cast<int>(model_index))));
                    for (const auto& t : teacher) or_terms.push_back(or_loss(t, student));
                }
                const Tensor<T> total = total_objective(ce, or_terms, alpha);
                std::vector<double> or_values;
                for (const auto& t : or_terms) or_values.push_back(static_cast<double>(t.item()));
                record.loss = total_loss(static_cast<double>(ce.item()), std::move(or_values), alpha);
                record.loss.total = static_cast<double>(total.item());
                if (!std::isfinite(record.loss.total)) fail(ErrorKind::Numeric, "non-finite total loss");
                tape.backward(total);
                if (config.grad_clip > 0) clip_grad_norm(model, config.grad_clip);
                optimizer.step(model, lr_feature, lr_classifier, config.momentum, config.weight_decay);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::Numeric) throw;
                fail(ErrorKind::Numeric, "model " + std::to_string(model_index) + ", epoch " +
                                             std::to_string(epoch + 1) + ", step " + std::to_string(step) +
                                             ": " + e.what());
            }
            if (observer) observer(record);
            member.log.push_back(std::move(record));
        }
    }

    model.set_mode(ModelMode::Eval);
    std::ostringstream rng_state;
    rng_state << data_rng;
    member.info.model_index = static_cast<int>(model_index);
    member.info.epoch = static_cast<int>(config.epochs);
    member.info.rng_state = rng_state.str();
    member.info.metrics = {{"seed", backbone.seed},
                           {"alpha", config.alpha},
                           {"teachers", teachers.size()},
                           {"train_accuracy", accuracy_of(model, data.train)},
                           {"test_accuracy", accuracy_of(model, data.test)}};
    return member;
}

RunSummary train_sequence(const TrainRunConfig& config, const fs::path& out_dir, const nlohmann::json& config_echo) {
    config.validate();
    const TrainingData data = TrainingData::load(config.data_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
    netpbm::write_bytes(out_dir / "config.json", config_echo.dump(2) + "\n");
    if (config.precision == Precision::Float64) return run_sequence<double>(config, data, out_dir, config_echo);
    return run_sequence<float>(config, data, out_dir, config_echo);
}

#define ORDISTILL_INSTANTIATE(T)                                                                    \
    template void sgd_step<T>(std::span<T>, std::span<const T>, std::span<T>, double, double, double); \
    template class SgdOptimizer<T>;                                                                 \
    template double clip_grad_norm<T>(Model<T>&, double);                                           \
    template TrainedMember<T> train_member<T>(const TrainRunConfig&, const TrainingData&, std::size_t, \
                                              std::span<const Model<T>* const>, const StepObserver&);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill
