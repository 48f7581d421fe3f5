#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ordistill/tensor.hpp"

namespace ordistill {

struct BackboneConfig {
    std::vector<std::size_t> stage_channels{16, 32, 64};
    std::size_t blocks_per_stage = 1;
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    std::size_t num_classes = 8;
    std::uint64_t seed = 0;

    /// Spatial extent of F after the 2x2 pooling at the end of every stage.
    std::size_t feature_height() const;
    std::size_t feature_width() const;
    std::size_t feature_channels() const { return stage_channels.empty() ? 0 : stage_channels.back(); }

    /// Throws ErrorKind::Config when the feature plane is below 4x4 or a
    /// field is out of range.
    void validate() const;

    bool operator==(const BackboneConfig&) const = default;
};

enum class ModelMode { Train, Eval };

template <typename T>
struct ForwardResult {
    Tensor<T> features;  // F, [B,C,H',W']
    Tensor<T> logits;    // [B,K]
};

/// Small CNN: per stage [conv3x3 -> relu] x blocks -> max_pool 2x2, then
/// linear(GAP(F)).
template <typename T>
class Model {
public:
    using Parameter = std::pair<std::string, Tensor<T>>;

    /// Kaiming-normal conv weights (std sqrt(2/fan_in)), zero biases, and a
    /// N(0, 0.01^2) classifier, all drawn from a generator seeded by config.seed.
    static Model init(const BackboneConfig& config);

    /// Model with the given parameters; names and shapes must match init().
    static Model from_parameters(const BackboneConfig& config, std::vector<Parameter> params);

    const BackboneConfig& config() const { return config_; }
    ModelMode mode() const { return mode_; }
    void set_mode(ModelMode mode);

    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Parameter>& parameters() { return params_; }
    const Tensor<T>& parameter(const std::string& name) const;
    std::size_t parameter_count() const;

    static bool is_classifier_parameter(const std::string& name);

    /// images [B,3,H,W] in [0,1].
    ForwardResult<T> forward(const Tensor<T>& images) const;

    /// Deep copy with independent parameter storage.
    Model clone() const;

private:
    Model(BackboneConfig config, std::vector<Parameter> params);

    BackboneConfig config_;
    std::vector<Parameter> params_;
    ModelMode mode_ = ModelMode::Train;
};

/// Parameter names and shapes init() produces for a config, in order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const BackboneConfig& config);

}  // namespace ordistill
