#include "ordistill.h"

#include <cstring>
#include <exception>
#include <string>

#include "ordistill/checkpoint.hpp"
#include "ordistill/config.hpp"
#include "ordistill/gradcheck.hpp"
#include "ordistill/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ordistill;

struct ord_config {
    RunConfig value;
};

struct ord_dataset {
    std::vector<LabeledImage> images;
};

struct ord_model {
    Model<double> model;
};

namespace {

thread_local std::string last_error;

ord_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return ORD_ERR_CONFIG;
        case ErrorKind::Io: return ORD_ERR_IO;
        case ErrorKind::Corrupt: return ORD_ERR_CORRUPT;
        // A malformed input file (bad PPM header, bad label) is a damaged artifact.
        case ErrorKind::Format: return ORD_ERR_CORRUPT;
        default: return ORD_ERR_RUNTIME;
    }
}

template <typename F>
ord_status guarded(F&& body) {
    last_error.clear();
    try {
        return body();
    } catch (const Error& e) {
        last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return ORD_ERR_RUNTIME;
    } catch (const std::exception& e) {
        last_error = e.what();
        return ORD_ERR_RUNTIME;
    }
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void require(const void* p, const char* what) {
    if (!p) fail(ErrorKind::Config, std::string(what) + " must not be null");
}

bool has_run_outputs(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return false;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name == "summary.json" || name == "config.json" || name.starts_with("model_") ||
            name.starts_with("train_log_")) {
            return true;
        }
    }
    return false;
}

}  // namespace

extern "C" {

const char* ord_version(void) { return "0.1.0"; }

const char* ord_last_error(void) { return last_error.c_str(); }

void ord_string_free(char* s) { delete[] s; }

ord_status ord_config_new(ord_config** out) {
    return guarded([&] {
        require(out, "out");
        *out = new ord_config{RunConfig::defaults()};
        return ORD_OK;
    });
}

ord_status ord_config_load(const char* path, ord_config** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new ord_config{load_run_config(path)};
        return ORD_OK;
    });
}

ord_status ord_config_set(ord_config* config, const char* key, const char* value) {
    return guarded([&] {
        require(config, "config");
        require(key, "key");
        require(value, "value");
        apply_override(config->value, key, value);
        return ORD_OK;
    });
}

ord_status ord_config_set_json(ord_config* config, const char* json_object) {
    return guarded([&] {
        require(config, "config");
        require(json_object, "json_object");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(json_object);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Config, e.what());
        }
        apply_json(config->value, j);
        return ORD_OK;
    });
}

ord_status ord_config_to_json(const ord_config* config, char** out_json) {
    return guarded([&] {
        require(config, "config");
        require(out_json, "out_json");
        *out_json = dup_string(config->value.to_json().dump(2));
        return ORD_OK;
    });
}

void ord_config_free(ord_config* config) { delete config; }

size_t ord_config_key_count(void) { return config_keys().size(); }

ord_status ord_config_key(size_t index, const char** name, const char** type, const char** help) {
    return guarded([&] {
        const auto& keys = config_keys();
        if (index >= keys.size()) fail(ErrorKind::Config, "config key index out of range");
        if (name) *name = keys[index].name.c_str();
        if (type) *type = keys[index].type.c_str();
        if (help) *help = keys[index].help.c_str();
        return ORD_OK;
    });
}

ord_status ord_generate_dataset(const ord_config* config, const char* out_dir) {
    return guarded([&] {
        require(config, "config");
        require(out_dir, "out_dir");
        generate(config->value.dataset, out_dir);
        return ORD_OK;
    });
}

ord_status ord_train(const ord_config* config, const char* out_dir, int threads, int force, char** out_summary_json) {
    return guarded([&] {
        require(config, "config");
        require(out_dir, "out_dir");
        if (!force && has_run_outputs(out_dir)) {
            fail(ErrorKind::Io, std::string(out_dir) + " already holds run outputs (use --force to overwrite)");
        }
        RunConfig rc = config->value;
        rc.train.threads = threads < 1 ? 1 : static_cast<std::size_t>(threads);
        rc.validate();
        const RunSummary summary = train_sequence(rc.train, out_dir, rc.to_json());
        if (out_summary_json) *out_summary_json = dup_string(summary.json.dump(2));
        return ORD_OK;
    });
}

ord_status ord_evaluate(const char* run_dir, const char* data_dir, const char* split, size_t subset,
                        const char* ensemble_mode, int with_overlap, char** out_result_json, char** out_overlap_csv) {
    return guarded([&] {
        require(run_dir, "run_dir");
        EvalOptions options;
        options.run_dir = run_dir;
        if (data_dir) options.data_dir = data_dir;
        if (split) options.split = split;
        options.subset = subset;
        if (ensemble_mode) options.mode = ensemble_mode_from_string(ensemble_mode);
        options.overlap = with_overlap != 0;
        const EnsembleResult result = evaluate_run(options);
        if (out_result_json) *out_result_json = dup_string(result.to_json().dump(2));
        if (out_overlap_csv) *out_overlap_csv = dup_string(result.overlap_csv());
        return ORD_OK;
    });
}

ord_status ord_export_attention(const char* run_dir, const char* data_dir, const char* split,
                                const char* const* image_ids, size_t id_count, const char* out_dir,
                                size_t* out_written) {
    return guarded([&] {
        require(run_dir, "run_dir");
        require(out_dir, "out_dir");
        if (id_count > 0) require(image_ids, "image_ids");
        AttentionExportOptions options;
        options.run_dir = run_dir;
        if (data_dir) options.data_dir = data_dir;
        if (split) options.split = split;
        for (size_t i = 0; i < id_count; ++i) {
            require(image_ids[i], "image id");
            options.image_ids.emplace_back(image_ids[i]);
        }
        options.out_dir = out_dir;
        const auto written = export_attention(options);
        if (out_written) *out_written = written.size();
        return ORD_OK;
    });
}

ord_status ord_gradcheck(const char* op, char** out_report_json) {
    return guarded([&] {
        const auto reports = gradcheck::run(op ? std::optional<std::string>(op) : std::nullopt);
        const nlohmann::json report = gradcheck_json(reports);
        if (out_report_json) *out_report_json = dup_string(report.dump(2));
        return report.at("passed").get<bool>() ? ORD_OK : ORD_VERIFY_FAILED;
    });
}

ord_status ord_ablate_alpha(const ord_config* config, const double* alphas, size_t alpha_count, const char* out_csv,
                            int force) {
    return guarded([&] {
        require(config, "config");
        require(out_csv, "out_csv");
        if (alpha_count == 0) fail(ErrorKind::Config, "no alpha values given");
        require(alphas, "alphas");
        std::error_code ec;
        if (!force && fs::exists(out_csv, ec)) {
            fail(ErrorKind::Io, std::string(out_csv) + " already exists (use --force to overwrite)");
        }
        const auto chains = run_alpha_chains(config->value, std::vector<double>(alphas, alphas + alpha_count));
        write_output(out_csv, alpha_sweep_csv(chains), force);
        return ORD_OK;
    });
}

ord_status ord_ablate_n(const ord_config* config, size_t n_min, size_t n_max, const char* out_csv, int force) {
    return guarded([&] {
        require(config, "config");
        require(out_csv, "out_csv");
        if (n_min < 1 || n_min > n_max) fail(ErrorKind::Config, "n range must satisfy 1 <= min <= max");
        std::error_code ec;
        if (!force && fs::exists(out_csv, ec)) {
            fail(ErrorKind::Io, std::string(out_csv) + " already exists (use --force to overwrite)");
        }
        RunConfig rc = config->value;
        rc.train.n_models = n_max;
        rc.train.seeds.clear();
        const auto chains = run_alpha_chains(rc, {0.0, rc.train.alpha});
        write_output(out_csv, n_range_csv(chains[0], chains[1], n_min, n_max), force);
        return ORD_OK;
    });
}

ord_status ord_dataset_load(const char* dir, const char* split, ord_dataset** out) {
    return guarded([&] {
        require(dir, "dir");
        require(split, "split");
        require(out, "out");
        *out = new ord_dataset{load(dir, split)};
        return ORD_OK;
    });
}

size_t ord_dataset_size(const ord_dataset* dataset) { return dataset ? dataset->images.size() : 0; }

ord_status ord_dataset_label(const ord_dataset* dataset, size_t index, int* out_label) {
    return guarded([&] {
        require(dataset, "dataset");
        require(out_label, "out_label");
        if (index >= dataset->images.size()) fail(ErrorKind::Index, "image index out of range");
        *out_label = dataset->images[index].label;
        return ORD_OK;
    });
}

void ord_dataset_free(ord_dataset* dataset) { delete dataset; }

ord_status ord_model_load(const char* checkpoint_path, ord_model** out) {
    return guarded([&] {
        require(checkpoint_path, "checkpoint_path");
        require(out, "out");
        Model<double> model = load_checkpoint<double>(checkpoint_path).model;
        model.set_mode(ModelMode::Eval);
        *out = new ord_model{std::move(model)};
        return ORD_OK;
    });
}

size_t ord_model_num_classes(const ord_model* model) { return model ? model->model.config().num_classes : 0; }

ord_status ord_model_predict(const ord_model* model, const ord_dataset* dataset, int* out_classes) {
    return guarded([&] {
        require(model, "model");
        require(dataset, "dataset");
        if (!dataset->images.empty()) require(out_classes, "out_classes");
        const Model<double>* members[] = {&model->model};
        const auto predictions = ensemble_predict<double>(members, dataset->images);
        std::copy(predictions.begin(), predictions.end(), out_classes);
        return ORD_OK;
    });
}

void ord_model_free(ord_model* model) { delete model; }

}  // extern "C"
