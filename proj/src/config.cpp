#include "ordistill/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ordistill {

namespace {

using nlohmann::json;

struct KeyBinding {
    ConfigKey key;
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

template <typename V>
V as(const json& j, const std::string& name) {
    try {
        if constexpr (std::is_same_v<V, bool>) {
            if (!j.is_boolean()) throw std::invalid_argument("expected true or false");
            return j.get<bool>();
        } else if constexpr (std::is_same_v<V, double>) {
            if (!j.is_number()) throw std::invalid_argument("expected a number");
            return j.get<double>();
        } else if constexpr (std::is_same_v<V, std::string>) {
            if (!j.is_string()) throw std::invalid_argument("expected a string");
            return j.get<std::string>();
        } else if constexpr (std::is_integral_v<V>) {
            if (!j.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
            return j.get<V>();
        } else {
            if (!j.is_array()) throw std::invalid_argument("expected a list");
            V out;
            for (const auto& e : j) out.push_back(as<typename V::value_type>(e, name));
            return out;
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorKind::Config, "config key '" + name + "': " + e.what());
    }
}

// Binds a key to a member reachable through `field`.
template <typename V, typename Field>
KeyBinding bind(std::string name, std::string type, std::string help, Field field) {
    auto set = [name, field](RunConfig& c, const json& j) { field(c) = as<V>(j, name); };
    auto get = [field](const RunConfig& c) {
        RunConfig copy = c;
        return json(field(copy));
    };
    return {{std::move(name), std::move(type), std::move(help)}, set, get};
}

const std::vector<KeyBinding>& bindings() {
    static const std::vector<KeyBinding> table = [] {
        std::vector<KeyBinding> b;
        // Training protocol.
        b.push_back(bind<std::size_t>("n_models", "int", "number of models trained in sequence (N)",
                                      [](RunConfig& c) -> auto& { return c.train.n_models; }));
        b.push_back(bind<double>("alpha", "float", "weight of the summed OR terms in the student objective",
                                 [](RunConfig& c) -> auto& { return c.train.alpha; }));
        b.push_back(bind<std::size_t>("epochs", "int", "epochs per model",
                                      [](RunConfig& c) -> auto& { return c.train.epochs; }));
        b.push_back(bind<double>("warmup_fraction", "float",
                                 "share of each student's epochs, counted from the start, trained with cross-entropy only",
                                 [](RunConfig& c) -> auto& { return c.train.warmup_fraction; }));
        b.push_back(bind<std::size_t>("batch_size", "int", "images per optimizer step",
                                      [](RunConfig& c) -> auto& { return c.train.batch_size; }));
        b.push_back(bind<double>("lr_feature", "float", "base learning rate of the convolutional stages",
                                 [](RunConfig& c) -> auto& { return c.train.lr_feature; }));
        b.push_back(bind<double>("lr_classifier", "float", "base learning rate of the linear classifier",
                                 [](RunConfig& c) -> auto& { return c.train.lr_classifier; }));
        b.push_back(bind<double>("lr_scale", "float", "multiplier applied to both base learning rates",
                                 [](RunConfig& c) -> auto& { return c.train.lr_scale; }));
        b.push_back(bind<double>("momentum", "float", "SGD momentum",
                                 [](RunConfig& c) -> auto& { return c.train.momentum; }));
        b.push_back(bind<double>("weight_decay", "float", "L2 weight decay added to every gradient",
                                 [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
        b.push_back(bind<double>("grad_clip", "float", "max joint L2 norm of the gradients per step (0 = off)",
                                 [](RunConfig& c) -> auto& { return c.train.grad_clip; }));
        b.push_back(bind<std::string>("schedule", "string", "learning-rate schedule (cosine)",
                                      [](RunConfig& c) -> auto& { return c.train.schedule; }));
        b.push_back(bind<std::uint64_t>("seed", "int", "model n is initialized with seed + n - 1 unless seeds is set",
                                        [](RunConfig& c) -> auto& { return c.train.seed; }));
        b.push_back(bind<std::vector<std::uint64_t>>("seeds", "int-list", "explicit per-model seeds, length n_models",
                                                     [](RunConfig& c) -> auto& { return c.train.seeds; }));
        b.push_back({{"data_dir", "string", "dataset root written by gen-data"},
                     [](RunConfig& c, const json& j) { c.train.data_dir = as<std::string>(j, "data_dir"); },
                     [](const RunConfig& c) { return json(c.train.data_dir.string()); }});
        b.push_back({{"precision", "string", "float32 or float64"},
                     [](RunConfig& c, const json& j) { c.train.precision = precision_from_string(as<std::string>(j, "precision")); },
                     [](const RunConfig& c) { return json(to_string(c.train.precision)); }});
        b.push_back(bind<bool>("augment", "bool", "random flip and pad-crop on training batches",
                               [](RunConfig& c) -> auto& { return c.train.augment; }));
        b.push_back({{"ensemble_mode", "string", "average 'probabilities' or 'logits'"},
                     [](RunConfig& c, const json& j) {
                         c.train.ensemble_mode = ensemble_mode_from_string(as<std::string>(j, "ensemble_mode"));
                     },
                     [](const RunConfig& c) { return json(to_string(c.train.ensemble_mode)); }});
        b.push_back(bind<std::vector<std::size_t>>("stage_channels", "int-list", "output channels of each backbone stage",
                                                   [](RunConfig& c) -> auto& { return c.train.stage_channels; }));
        b.push_back(bind<std::size_t>("blocks_per_stage", "int", "conv3x3+relu blocks before each pooling",
                                      [](RunConfig& c) -> auto& { return c.train.blocks_per_stage; }));
        // Synthetic dataset.
        b.push_back(bind<std::size_t>("num_classes", "int", "classes K",
                                      [](RunConfig& c) -> auto& { return c.dataset.num_classes; }));
        b.push_back(bind<std::size_t>("patches_per_class", "int", "glyphs per class P",
                                      [](RunConfig& c) -> auto& { return c.dataset.patches_per_class; }));
        b.push_back(bind<std::size_t>("patch_size", "int", "glyph side in pixels",
                                      [](RunConfig& c) -> auto& { return c.dataset.patch_size; }));
        b.push_back(bind<std::size_t>("image_size", "int", "image side in pixels (also the network input size)",
                                      [](RunConfig& c) -> auto& { return c.dataset.image_size; }));
        b.push_back(bind<std::size_t>("train_per_class", "int", "training images per class",
                                      [](RunConfig& c) -> auto& { return c.dataset.train_per_class; }));
        b.push_back(bind<std::size_t>("test_per_class", "int", "test images per class",
                                      [](RunConfig& c) -> auto& { return c.dataset.test_per_class; }));
        b.push_back(bind<std::size_t>("distractors", "int", "glyphs shared by all classes",
                                      [](RunConfig& c) -> auto& { return c.dataset.distractors; }));
        b.push_back(bind<std::uint64_t>("data_seed", "int", "dataset generator seed",
                                        [](RunConfig& c) -> auto& { return c.dataset.seed; }));
        b.push_back(bind<double>("background_noise", "float", "uniform pixel noise amplitude",
                                 [](RunConfig& c) -> auto& { return c.dataset.background_noise; }));
        b.push_back(bind<double>("salient_contrast", "float", "ink contrast of each class's first glyph and the distractors",
                                 [](RunConfig& c) -> auto& { return c.dataset.salient_contrast; }));
        b.push_back(bind<double>("subtle_contrast", "float", "ink contrast of the remaining class glyphs",
                                 [](RunConfig& c) -> auto& { return c.dataset.subtle_contrast; }));
        b.push_back(bind<double>("flip_prob", "float", "per-pixel bit flip probability inside glyphs",
                                 [](RunConfig& c) -> auto& { return c.dataset.flip_prob; }));
        b.push_back(bind<double>("fade_prob", "float", "probability that an image's salient glyph is drawn faint",
                                 [](RunConfig& c) -> auto& { return c.dataset.fade_prob; }));
        b.push_back(bind<double>("fade_contrast", "float", "ink contrast of a faint salient glyph",
                                 [](RunConfig& c) -> auto& { return c.dataset.fade_contrast; }));
        return b;
    }();
    return table;
}

const KeyBinding* find_binding(const std::string& name) {
    for (const auto& b : bindings()) {
        if (b.key.name == name) return &b;
    }
    return nullptr;
}

json parse_override(const ConfigKey& key, const std::string& text) {
    const auto bad = [&]() -> json {
        fail(ErrorKind::Config, "config key '" + key.name + "': cannot parse '" + text + "' as " + key.type);
    };
    if (key.type == "string") return text;
    if (key.type == "bool") {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        return bad();
    }
    if (key.type == "int-list") {
        if (!text.empty() && text.front() == '[') {
            try {
                return json::parse(text);
            } catch (const json::exception&) {
                return bad();
            }
        }
        json list = json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            std::uint64_t v = 0;
            const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc{} || end != item.data() + item.size()) return bad();
            list.push_back(v);
        }
        return list;
    }
    if (key.type == "int") {
        std::uint64_t v = 0;
        const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) return bad();
        return v;
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) return bad();
        return v;
    } catch (const std::exception&) {
        return bad();
    }
}

}  // namespace

RunConfig RunConfig::defaults() {
    return RunConfig{};
}

nlohmann::json RunConfig::to_json() const {
    json j = json::object();
    for (const auto& b : bindings()) j[b.key.name] = b.get(*this);
    return j;
}

void RunConfig::validate() const {
    dataset.validate();
    train.validate();
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        const RunConfig d = RunConfig::defaults();
        for (const auto& b : bindings()) {
            ConfigKey key = b.key;
            key.help += " (default " + b.get(d).dump() + ")";
            k.push_back(key);
        }
        return k;
    }();
    return keys;
}

void apply_json(RunConfig& config, const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
    for (const auto& [name, value] : j.items()) {
        const KeyBinding* b = find_binding(name);
        if (!b) fail(ErrorKind::Config, "unknown config key '" + name + "'");
        b->set(config, value);
    }
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '-', '_');
    const KeyBinding* b = find_binding(name);
    if (!b) fail(ErrorKind::Config, "unknown config key '" + key + "'");
    b->set(config, parse_override(b->key, value));
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, path.string() + ": " + e.what());
    }
    RunConfig config = RunConfig::defaults();
    apply_json(config, j);
    return config;
}

}  // namespace ordistill
