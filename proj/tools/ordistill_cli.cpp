// Command-line front end. Talks to the library only through ordistill.h.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ordistill.h"

namespace {

struct CString {
    char* p = nullptr;
    ~CString() { ord_string_free(p); }
    std::string str() const { return p ? p : ""; }
};

using ConfigPtr = std::unique_ptr<ord_config, decltype(&ord_config_free)>;

int report(ord_status status) {
    if (status != ORD_OK && status != ORD_VERIFY_FAILED) {
        std::fprintf(stderr, "error: %s\n", ord_last_error());
    }
    return static_cast<int>(status);
}

std::string flag_name(std::string key) {
    for (char& c : key) {
        if (c == '_') c = '-';
    }
    return key;
}

std::string config_key_listing() {
    std::string out = "Config keys (JSON name, --flag form uses '-'):\n";
    for (std::size_t i = 0; i < ord_config_key_count(); ++i) {
        const char *name = nullptr, *type = nullptr, *help = nullptr;
        ord_config_key(i, &name, &type, &help);
        out += "  " + std::string(name) + " <" + type + ">  " + help + "\n";
    }
    return out;
}

// Flags shared by every command that builds a run configuration.
struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;  // key -> raw text

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file; flags below override it");
        for (std::size_t i = 0; i < ord_config_key_count(); ++i) {
            const char *name = nullptr, *type = nullptr, *help = nullptr;
            ord_config_key(i, &name, &type, &help);
            auto* opt = app->add_option("--" + flag_name(name), values[name], help);
            opt->type_name(std::string("<") + type + ">");
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    // Builds the resolved config. Returns a status and leaves `out` null on failure.
    ord_status build(CLI::App* app, ConfigPtr& out) {
        ord_config* raw = nullptr;
        ord_status s = config_path.empty() ? ord_config_new(&raw) : ord_config_load(config_path.c_str(), &raw);
        if (s != ORD_OK) return s;
        ConfigPtr config(raw, ord_config_free);
        for (const auto& [key, value] : values) {
            if (app->count("--" + flag_name(key)) == 0) continue;
            s = ord_config_set(config.get(), key.c_str(), value.c_str());
            if (s != ORD_OK) return s;
        }
        out = std::move(config);
        return ORD_OK;
    }
};

int env_threads() {
    const char* v = std::getenv("ORDISTILL_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) {
        std::fprintf(stderr, "warning: ignoring ORDISTILL_THREADS=%s\n", v);
        return 1;
    }
    return static_cast<int>(n);
}

// Writes text to path. Returns 3 when the file exists without --force or cannot be written.
int write_text(const std::string& path, const std::string& text, bool force) {
    std::error_code ec;
    if (!force && std::filesystem::exists(path, ec)) {
        std::fprintf(stderr, "error: %s already exists (use --force to overwrite)\n", path.c_str());
        return ORD_ERR_IO;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out.good()) {
        std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
        return ORD_ERR_IO;
    }
    return ORD_OK;
}

bool parse_n_range(const std::string& text, std::size_t& lo, std::size_t& hi) {
    const auto dots = text.find("..");
    if (dots == std::string::npos) return false;
    try {
        std::size_t used = 0;
        const std::string a = text.substr(0, dots), b = text.substr(dots + 2);
        lo = std::stoul(a, &used);
        if (used != a.size()) return false;
        hi = std::stoul(b, &used);
        return used == b.size();
    } catch (const std::exception&) {
        return false;
    }
}

void print_eval(const nlohmann::json& result) {
    const auto& acc = result.at("model_accuracy");
    for (std::size_t i = 0; i < acc.size(); ++i) {
        std::printf("model %zu  accuracy %.4f\n", i + 1, acc[i].get<double>());
    }
    std::printf("ensemble  accuracy %.4f\n", result.at("ensemble_accuracy").get<double>());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential attention-diverse ensemble training on synthetic fine-grained data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ord_version()));
    app.footer(config_key_listing());

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
    ConfigFlags gen_flags;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen_flags.attach(gen);

    // train
    auto* train = app.add_subcommand("train", "Train N models in sequence (ORDISTILL_THREADS caps threads)");
    ConfigFlags train_flags;
    std::string train_out;
    bool train_force = false;
    train->add_option("--out", train_out, "run directory for checkpoints, logs and summary")->required();
    train->add_flag("--force", train_force, "overwrite an existing run");
    train_flags.attach(train);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a run's models and their ensemble");
    std::string eval_run, eval_data, eval_split = "test", eval_mode = "probabilities", eval_out, eval_overlap_out;
    std::size_t eval_subset = 0;
    bool eval_force = false, eval_no_overlap = false;
    eval->add_option("--run", eval_run, "run directory written by train")->required();
    eval->add_option("--data-dir", eval_data, "dataset root (default: the run's data_dir)");
    eval->add_option("--split", eval_split, "train or test")->capture_default_str();
    eval->add_option("--subset", eval_subset, "use only the first n models (0: all)")->capture_default_str();
    eval->add_option("--mode", eval_mode, "probabilities or logits")->capture_default_str();
    eval->add_option("--out", eval_out, "write the result JSON here");
    eval->add_option("--overlap-out", eval_overlap_out, "write the overlap matrix CSV here");
    eval->add_flag("--no-overlap", eval_no_overlap, "skip the attention-overlap matrix");
    eval->add_flag("--force", eval_force, "overwrite existing output files");
    eval->footer(config_key_listing());

    // export-attention
    auto* exp = app.add_subcommand("export-attention", "Write attention heatmaps as PGM images");
    std::string exp_run, exp_data, exp_split = "test", exp_out;
    std::vector<std::string> exp_ids;
    exp->add_option("--run", exp_run, "run directory written by train")->required();
    exp->add_option("--ids", exp_ids, "image ids, comma separated")->required()->delimiter(',');
    exp->add_option("--data-dir", exp_data, "dataset root (default: the run's data_dir)");
    exp->add_option("--split", exp_split, "train or test")->capture_default_str();
    exp->add_option("--out", exp_out, "output directory")->required();
    exp->footer(config_key_listing());

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit");
    std::string gc_op, gc_out;
    bool gc_force = false;
    gc->add_option("--op", gc_op, "check a single op");
    gc->add_option("--out", gc_out, "write the report JSON here");
    gc->add_flag("--force", gc_force, "overwrite an existing report");
    gc->footer(config_key_listing());

    // ablate
    auto* abl = app.add_subcommand("ablate", "Sweep alpha or the number of models and write a CSV");
    ConfigFlags abl_flags;
    std::vector<double> abl_alphas;
    std::string abl_range, abl_out;
    bool abl_force = false;
    auto* alphas_opt = abl->add_option("--alphas", abl_alphas, "alpha values, comma separated")->delimiter(',');
    auto* range_opt = abl->add_option("--n-range", abl_range, "model counts lo..hi; compares alpha=0 with --alpha");
    alphas_opt->excludes(range_opt);
    abl->add_option("--out", abl_out, "CSV path")->required();
    abl->add_flag("--force", abl_force, "overwrite an existing CSV");
    abl_flags.attach(abl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ORD_ERR_CONFIG;
    }

    if (*gen) {
        ConfigPtr config(nullptr, ord_config_free);
        ord_status s = gen_flags.build(gen, config);
        if (s == ORD_OK) s = ord_generate_dataset(config.get(), gen_out.c_str());
        if (s == ORD_OK) std::printf("dataset written to %s\n", gen_out.c_str());
        return report(s);
    }

    if (*train) {
        ConfigPtr config(nullptr, ord_config_free);
        ord_status s = train_flags.build(train, config);
        CString summary;
        if (s == ORD_OK) s = ord_train(config.get(), train_out.c_str(), env_threads(), train_force, &summary.p);
        if (s == ORD_OK) std::printf("%s\n", summary.str().c_str());
        return report(s);
    }

    if (*eval) {
        CString json, csv;
        const ord_status s = ord_evaluate(eval_run.c_str(), eval_data.empty() ? nullptr : eval_data.c_str(),
                                          eval_split.c_str(), eval_subset, eval_mode.c_str(), !eval_no_overlap,
                                          &json.p, &csv.p);
        if (s != ORD_OK) return report(s);
        print_eval(nlohmann::json::parse(json.str()));
        if (!eval_out.empty()) {
            if (int rc = write_text(eval_out, json.str() + "\n", eval_force)) return rc;
        }
        if (!eval_overlap_out.empty()) {
            if (eval_no_overlap) {
                std::fprintf(stderr, "error: --overlap-out conflicts with --no-overlap\n");
                return ORD_ERR_CONFIG;
            }
            if (int rc = write_text(eval_overlap_out, csv.str(), eval_force)) return rc;
        }
        return 0;
    }

    if (*exp) {
        std::vector<const char*> ids;
        for (const auto& id : exp_ids) ids.push_back(id.c_str());
        std::size_t written = 0;
        const ord_status s = ord_export_attention(exp_run.c_str(), exp_data.empty() ? nullptr : exp_data.c_str(),
                                                  exp_split.c_str(), ids.data(), ids.size(), exp_out.c_str(), &written);
        if (s == ORD_OK) std::printf("%zu heatmaps written to %s\n", written, exp_out.c_str());
        return report(s);
    }

    if (*gc) {
        CString json;
        const ord_status s = ord_gradcheck(gc_op.empty() ? nullptr : gc_op.c_str(), &json.p);
        if (s != ORD_OK && s != ORD_VERIFY_FAILED) return report(s);
        const auto result = nlohmann::json::parse(json.str());
        for (const auto& op : result.at("ops")) {
            std::printf("%-22s max_rel_err %.3e  tol %.0e  %s\n", op.at("op").get<std::string>().c_str(),
                        op.at("max_relative_error").get<double>(), op.at("tolerance").get<double>(),
                        op.at("passed").get<bool>() ? "ok" : "FAIL");
        }
        if (!gc_out.empty()) {
            if (int rc = write_text(gc_out, result.dump(2) + "\n", gc_force)) return rc;
        }
        return report(s);
    }

    if (*abl) {
        ConfigPtr config(nullptr, ord_config_free);
        ord_status s = abl_flags.build(abl, config);
        if (s != ORD_OK) return report(s);
        if (!abl_alphas.empty()) {
            s = ord_ablate_alpha(config.get(), abl_alphas.data(), abl_alphas.size(), abl_out.c_str(), abl_force);
        } else if (!abl_range.empty()) {
            std::size_t lo = 0, hi = 0;
            if (!parse_n_range(abl_range, lo, hi)) {
                std::fprintf(stderr, "error: --n-range expects lo..hi, got '%s'\n", abl_range.c_str());
                return ORD_ERR_CONFIG;
            }
            s = ord_ablate_n(config.get(), lo, hi, abl_out.c_str(), abl_force);
        } else {
            std::fprintf(stderr, "error: ablate needs --alphas or --n-range\n");
            return ORD_ERR_CONFIG;
        }
        if (s == ORD_OK) std::printf("wrote %s\n", abl_out.c_str());
        return report(s);
    }
    return ORD_ERR_CONFIG;
}
