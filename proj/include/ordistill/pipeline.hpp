#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordistill/config.hpp"
#include "ordistill/ensemble.hpp"
#include "ordistill/gradcheck.hpp"

namespace ordistill {

/// model_NN.ckpt files of a training run, in model order. Throws
/// ErrorKind::Io when the directory is missing or holds none.
std::vector<std::filesystem::path> run_checkpoints(const std::filesystem::path& run_dir);

struct EvalOptions {
    std::filesystem::path run_dir;
    std::filesystem::path data_dir;  // empty: taken from the run's config.json
    std::string split = "test";
    std::size_t subset = 0;  // evaluate the first `subset` models; 0 means all
    EnsembleMode mode = EnsembleMode::Probabilities;
    bool overlap = true;
};

/// Per-model and ensemble accuracy plus the attention-overlap matrix.
EnsembleResult evaluate_run(const EvalOptions& options);

struct AttentionExportOptions {
    std::filesystem::path run_dir;
    std::filesystem::path data_dir;  // empty: taken from the run's config.json
    std::string split = "test";
    std::vector<std::string> image_ids;
    std::filesystem::path out_dir;
};

/// Writes one min-max scaled PGM per image, model and map stage, named
/// `{id}_{model:02}_{stage}.pgm`. Unknown ids throw ErrorKind::Config.
std::vector<std::filesystem::path> export_attention(const AttentionExportOptions& options);

/// Gray levels for a map: min-max scaled to 0..255, all zero when constant.
std::vector<std::uint8_t> heatmap_bytes(std::span<const double> values);

nlohmann::json gradcheck_json(const std::vector<gradcheck::Report>& reports);

/// One trained chain of models for a given alpha. Model 1 never sees a
/// teacher, so chains for different alphas share it.
struct ChainResult {
    double alpha = 0;
    std::vector<double> model_accuracy;     // test accuracy of models 1..N
    std::vector<double> prefix_ensemble;    // ensemble accuracy of models 1..n
    std::vector<std::vector<double>> overlap;
};

/// Trains model 1 once and, for every alpha, models 2..n_models on top of
/// it. The dataset is read from config.train.data_dir.
std::vector<ChainResult> run_alpha_chains(const RunConfig& config, const std::vector<double>& alphas);

/// `alpha,n_models,ensemble_accuracy,mean_model_accuracy,overlap_1_2`
std::string alpha_sweep_csv(const std::vector<ChainResult>& chains);
/// `n_models,single_base,ensemble_base,single_ours,ensemble_ours` for n in
/// [lo, hi]; base is the alpha=0 chain.
std::string n_range_csv(const ChainResult& base, const ChainResult& ours, std::size_t lo, std::size_t hi);

/// Writes `text` to `path`; an existing file without `force` is ErrorKind::Io.
void write_output(const std::filesystem::path& path, const std::string& text, bool force);

}  // namespace ordistill
