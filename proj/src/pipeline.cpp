#include "ordistill/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "ordistill/checkpoint.hpp"
#include "ordistill/netpbm.hpp"

namespace ordistill {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_run_config(const fs::path& run_dir) {
    const fs::path path = run_dir / "config.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) return nlohmann::json::object();
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Corrupt, path.string() + ": " + e.what());
    }
}

fs::path resolve_data_dir(const fs::path& run_dir, const fs::path& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    const auto config = read_run_config(run_dir);
    if (config.contains("data_dir") && config["data_dir"].is_string()) return config["data_dir"].get<std::string>();
    fail(ErrorKind::Config, "no data_dir given and none recorded in " + (run_dir / "config.json").string());
}

Precision run_precision(const fs::path& run_dir) {
    const auto config = read_run_config(run_dir);
    if (config.contains("precision") && config["precision"].is_string()) {
        return precision_from_string(config["precision"].get<std::string>());
    }
    return Precision::Float32;
}

template <typename T>
std::vector<Model<T>> load_models(const std::vector<fs::path>& paths) {
    std::vector<Model<T>> models;
    for (const auto& p : paths) {
        Model<T> m = load_checkpoint<T>(p).model;
        m.set_mode(ModelMode::Eval);
        models.push_back(std::move(m));
    }
    return models;
}

template <typename T>
EnsembleResult evaluate_with(const std::vector<fs::path>& paths, std::span<const LabeledImage> images,
                             const EvalOptions& options) {
    const auto models = load_models<T>(paths);
    std::vector<const Model<T>*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    return evaluate_ensemble<T>(ptrs, images, options.mode, options.overlap);
}

template <typename T>
std::vector<fs::path> export_with(const std::vector<fs::path>& paths, const std::vector<const LabeledImage*>& images,
                                  const fs::path& out_dir) {
    const auto models = load_models<T>(paths);
    std::vector<fs::path> written;
    for (const LabeledImage* image : images) {
        const Tensor<T> batch = make_batch<T>(std::span<const LabeledImage>(image, 1));
        for (std::size_t m = 0; m < models.size(); ++m) {
            NoGradScope<T> no_grad;
            const auto raw = spatial_attention(models[m].forward(batch).features, static_cast<int>(m + 1));
            const auto normalized = normalize(raw);
            const auto teacher = teacher_map(normalized);
            const auto student = student_map(normalized);
            for (const AttentionMap<T>* map : {&raw, &normalized, &teacher, &student}) {
                const auto& shape = map->values.shape();
                const std::vector<double> values(map->values.values().begin(), map->values.values().end());
                netpbm::Raster r{shape[3], shape[2], 1, heatmap_bytes(values)};
                char name[160];
                std::snprintf(name, sizeof(name), "%s_%02zu_%s.pgm", image->id.c_str(), m + 1, to_string(map->stage));
                netpbm::write_file(out_dir / name, r);
                written.push_back(out_dir / name);
            }
        }
    }
    return written;
}

template <typename T>
std::vector<ChainResult> alpha_chains(const RunConfig& config, const std::vector<double>& alphas) {
    const TrainingData data = TrainingData::load(config.train.data_dir);
    const std::size_t n = config.train.n_models;
    const auto test_labels = labels_of(data.test);

    TrainedMember<T> first = train_member<T>(config.train, data, 1, {});
    std::vector<ChainResult> chains;
    for (double alpha : alphas) {
        TrainRunConfig tc = config.train;
        tc.alpha = alpha;
        std::vector<Model<T>> members;
        members.reserve(n);
        members.push_back(first.model);
        for (std::size_t i = 2; i <= n; ++i) {
            std::vector<const Model<T>*> teachers;
            for (const auto& m : members) teachers.push_back(&m);
            members.push_back(train_member<T>(tc, data, i, teachers).model);
        }
        std::vector<const Model<T>*> ptrs;
        for (const auto& m : members) ptrs.push_back(&m);
        const EnsembleResult full = evaluate_ensemble<T>(ptrs, data.test, tc.ensemble_mode, true);

        ChainResult chain;
        chain.alpha = alpha;
        chain.model_accuracy = full.model_accuracy;
        chain.overlap = full.overlap;
        std::vector<std::vector<double>> scores;
        for (const auto* m : ptrs) {
            scores.push_back(class_scores(*m, data.test, tc.ensemble_mode));
            chain.prefix_ensemble.push_back(
                top1_accuracy(argmax_rows(average_scores(scores), data.num_classes), test_labels));
        }
        chains.push_back(std::move(chain));
    }
    return chains;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::vector<fs::path> run_checkpoints(const fs::path& run_dir) {
    std::error_code ec;
    if (!fs::is_directory(run_dir, ec)) fail(ErrorKind::Io, "run directory not found: " + run_dir.string());
    static const std::regex pattern(R"(model_(\d+)\.ckpt)");
    std::map<int, fs::path> found;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) found[std::stoi(m[1].str())] = entry.path();
    }
    if (found.empty()) fail(ErrorKind::Io, "no model_NN.ckpt files in " + run_dir.string());
    std::vector<fs::path> paths;
    int expected = 1;
    for (const auto& [index, path] : found) {
        if (index != expected++) fail(ErrorKind::Io, "checkpoint sequence has a gap before " + path.string());
        paths.push_back(path);
    }
    return paths;
}

EnsembleResult evaluate_run(const EvalOptions& options) {
    auto paths = run_checkpoints(options.run_dir);
    if (options.subset > 0) {
        if (options.subset > paths.size()) {
            fail(ErrorKind::Config, "subset " + std::to_string(options.subset) + " exceeds the " +
                                        std::to_string(paths.size()) + " checkpoints in " + options.run_dir.string());
        }
        paths.resize(options.subset);
    }
    const fs::path data_dir = resolve_data_dir(options.run_dir, options.data_dir);
    const auto images = load(data_dir, options.split);
    EnsembleResult result = run_precision(options.run_dir) == Precision::Float64
                                ? evaluate_with<double>(paths, images, options)
                                : evaluate_with<float>(paths, images, options);
    result.config = {{"run_dir", options.run_dir.string()},
                     {"data_dir", data_dir.string()},
                     {"split", options.split},
                     {"n_models", paths.size()},
                     {"ensemble_mode", to_string(options.mode)}};
    return result;
}

std::vector<std::uint8_t> heatmap_bytes(std::span<const double> values) {
    std::vector<std::uint8_t> out(values.size(), 0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (!(range > 0)) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround((values[i] - *lo) / range * 255.0));
    }
    return out;
}

std::vector<fs::path> export_attention(const AttentionExportOptions& options) {
    const auto paths = run_checkpoints(options.run_dir);
    const fs::path data_dir = resolve_data_dir(options.run_dir, options.data_dir);
    const auto images = load(data_dir, options.split);
    std::vector<const LabeledImage*> selected;
    for (const auto& id : options.image_ids) {
        const auto it = std::find_if(images.begin(), images.end(), [&](const LabeledImage& im) { return im.id == id; });
        if (it == images.end()) fail(ErrorKind::Config, "no image '" + id + "' in split " + options.split);
        selected.push_back(&*it);
    }
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + options.out_dir.string() + ": " + ec.message());
    return run_precision(options.run_dir) == Precision::Float64 ? export_with<double>(paths, selected, options.out_dir)
                                                                : export_with<float>(paths, selected, options.out_dir);
}

nlohmann::json gradcheck_json(const std::vector<gradcheck::Report>& reports) {
    nlohmann::json ops = nlohmann::json::array();
    bool all = true;
    for (const auto& r : reports) {
        ops.push_back({{"op", r.op},
                       {"max_relative_error", r.max_relative_error},
                       {"tolerance", r.tolerance},
                       {"trials", r.trials},
                       {"passed", r.passed}});
        all = all && r.passed;
    }
    return {{"passed", all}, {"ops", ops}};
}

std::vector<ChainResult> run_alpha_chains(const RunConfig& config, const std::vector<double>& alphas) {
    config.validate();
    if (alphas.empty()) fail(ErrorKind::Config, "no alpha values given");
    return config.train.precision == Precision::Float64 ? alpha_chains<double>(config, alphas)
                                                        : alpha_chains<float>(config, alphas);
}

std::string alpha_sweep_csv(const std::vector<ChainResult>& chains) {
    std::string out = "alpha,n_models,ensemble_accuracy,mean_model_accuracy,overlap_1_2\n";
    for (const auto& c : chains) {
        double mean = 0;
        for (double a : c.model_accuracy) mean += a;
        mean /= static_cast<double>(c.model_accuracy.size());
        const std::string overlap = c.overlap.size() > 1 ? fmt(c.overlap[0][1]) : "";
        char alpha[32];
        std::snprintf(alpha, sizeof(alpha), "%g", c.alpha);
        out += std::string(alpha) + "," + std::to_string(c.model_accuracy.size()) + "," +
               fmt(c.prefix_ensemble.back()) + "," + fmt(mean) + "," + overlap + "\n";
    }
    return out;
}

std::string n_range_csv(const ChainResult& base, const ChainResult& ours, std::size_t lo, std::size_t hi) {
    if (lo < 1 || lo > hi || hi > base.model_accuracy.size() || hi > ours.model_accuracy.size()) {
        fail(ErrorKind::Config, "n range " + std::to_string(lo) + ".." + std::to_string(hi) + " is invalid");
    }
    std::string out = "n_models,single_base,ensemble_base,single_ours,ensemble_ours\n";
    for (std::size_t n = lo; n <= hi; ++n) {
        out += std::to_string(n) + "," + fmt(base.model_accuracy[n - 1]) + "," + fmt(base.prefix_ensemble[n - 1]) +
               "," + fmt(ours.model_accuracy[n - 1]) + "," + fmt(ours.prefix_ensemble[n - 1]) + "\n";
    }
    return out;
}

void write_output(const fs::path& path, const std::string& text, bool force) {
    std::error_code ec;
    if (fs::exists(path, ec) && !force) {
        fail(ErrorKind::Io, path.string() + " already exists (use --force to overwrite)");
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    netpbm::write_bytes(path, text);
}

}  // namespace ordistill
