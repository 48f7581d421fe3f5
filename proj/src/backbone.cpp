#include "ordistill/backbone.hpp"

#include <cmath>
#include <random>

#include "ordistill/ops.hpp"

namespace ordistill {

namespace {

constexpr std::size_t kInputChannels = 3;
constexpr std::size_t kKernel = 3;
constexpr std::size_t kMinFeatureExtent = 4;
constexpr double kClassifierStd = 0.01;

std::string conv_name(std::size_t stage, std::size_t block, const char* what) {
    return "stage" + std::to_string(stage) + ".conv" + std::to_string(block) + "." + what;
}

}  // namespace

std::size_t BackboneConfig::feature_height() const {
    return input_height >> stage_channels.size();
}

std::size_t BackboneConfig::feature_width() const {
    return input_width >> stage_channels.size();
}

void BackboneConfig::validate() const {
    if (stage_channels.empty()) fail(ErrorKind::Config, "backbone needs at least one stage");
    for (std::size_t c : stage_channels) {
        if (c == 0) fail(ErrorKind::Config, "stage_channels entries must be positive");
    }
    if (blocks_per_stage == 0) fail(ErrorKind::Config, "blocks_per_stage must be positive");
    if (num_classes < 2) fail(ErrorKind::Config, "num_classes must be at least 2");
    if (stage_channels.size() >= 16 || feature_height() < kMinFeatureExtent ||
        feature_width() < kMinFeatureExtent) {
        fail(ErrorKind::Config, "input " + std::to_string(input_height) + "x" +
                                    std::to_string(input_width) + " with " +
                                    std::to_string(stage_channels.size()) +
                                    " stages leaves a feature plane below 4x4");
    }
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const BackboneConfig& config) {
    std::vector<std::pair<std::string, Shape>> layout;
    std::size_t in = kInputChannels;
    for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
        const std::size_t out = config.stage_channels[s];
        for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
            layout.emplace_back(conv_name(s, b, "weight"), Shape{out, in, kKernel, kKernel});
            layout.emplace_back(conv_name(s, b, "bias"), Shape{out});
            in = out;
        }
    }
    layout.emplace_back("classifier.weight", Shape{config.num_classes, in});
    layout.emplace_back("classifier.bias", Shape{config.num_classes});
    return layout;
}

template <typename T>
Model<T>::Model(BackboneConfig config, std::vector<Parameter> params)
    : config_(std::move(config)), params_(std::move(params)) {}

template <typename T>
Model<T> Model<T>::init(const BackboneConfig& config) {
    config.validate();
    std::mt19937_64 gen(config.seed);
    std::vector<Parameter> params;
    for (auto& [name, shape] : parameter_layout(config)) {
        Tensor<T> t(shape);
        const bool is_bias = name.ends_with(".bias");
        if (!is_bias) {
            const double stddev = is_classifier_parameter(name)
                                      ? kClassifierStd
                                      : std::sqrt(2.0 / static_cast<double>(shape[1] * shape[2] * shape[3]));
            std::normal_distribution<double> dist(0.0, stddev);
            for (T& v : t.mutable_values()) v = static_cast<T>(dist(gen));
        }
        t.set_requires_grad(true);
        params.emplace_back(name, std::move(t));
    }
    return Model(config, std::move(params));
}

template <typename T>
Model<T> Model<T>::from_parameters(const BackboneConfig& config, std::vector<Parameter> params) {
    config.validate();
    const auto layout = parameter_layout(config);
    if (layout.size() != params.size()) {
        fail(ErrorKind::Corrupt, "expected " + std::to_string(layout.size()) + " parameters, got " +
                                     std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].first != params[i].first || layout[i].second != params[i].second.shape()) {
            fail(ErrorKind::Corrupt, "parameter " + params[i].first + " " +
                                         shape_str(params[i].second.shape()) + " does not match expected " +
                                         layout[i].first + " " + shape_str(layout[i].second));
        }
        params[i].second.set_requires_grad(true);
    }
    return Model(config, std::move(params));
}

template <typename T>
void Model<T>::set_mode(ModelMode mode) {
    mode_ = mode;
}

template <typename T>
const Tensor<T>& Model<T>::parameter(const std::string& name) const {
    for (const auto& [n, t] : params_) {
        if (n == name) return t;
    }
    fail(ErrorKind::Contract, "no parameter named " + name);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.second.numel();
    return n;
}

template <typename T>
bool Model<T>::is_classifier_parameter(const std::string& name) {
    return name.starts_with("classifier.");
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.extent(1) != kInputChannels ||
        images.extent(2) != config_.input_height || images.extent(3) != config_.input_width) {
        fail(ErrorKind::Shape, "backbone expects images [B,3," + std::to_string(config_.input_height) +
                                   "," + std::to_string(config_.input_width) + "], got " +
                                   shape_str(images.shape()));
    }
    Tensor<T> x = images;
    std::size_t p = 0;
    for (std::size_t s = 0; s < config_.stage_channels.size(); ++s) {
        for (std::size_t b = 0; b < config_.blocks_per_stage; ++b, p += 2) {
            x = ops::relu(ops::conv2d(x, params_[p].second, params_[p + 1].second,
                                      ops::Conv2dParams{1, 1}));
        }
        x = ops::max_pool2d(x, 2, 2);
    }
    const std::size_t batch = x.extent(0), channels = x.extent(1);
    Tensor<T> pooled = ops::reshape(ops::global_avg_pool(x), Shape{batch, channels});
    Tensor<T> logits = ops::linear(pooled, params_[p].second, params_[p + 1].second);
    return {std::move(x), std::move(logits)};
}

template <typename T>
Model<T> Model<T>::clone() const {
    std::vector<Parameter> params;
    params.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        Tensor<T> copy = t.detach();
        copy.set_requires_grad(t.requires_grad());
        params.emplace_back(name, std::move(copy));
    }
    Model out(config_, std::move(params));
    out.mode_ = mode_;
    return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace ordistill
