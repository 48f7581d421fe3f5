#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordistill/dataset.hpp"
#include "ordistill/trainer.hpp"

namespace ordistill {

/// Everything a run needs: dataset generation plus sequential training.
/// Serialized as one flat JSON object; see config_keys().
struct RunConfig {
    DatasetConfig dataset;
    TrainRunConfig train;

    /// Desk-scale defaults used by the CLI and the acceptance experiments.
    static RunConfig defaults();

    nlohmann::json to_json() const;
    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string type;  // int, float, bool, string, int-list
    std::string help;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Applies the keys of a JSON object. Unknown keys and ill-typed values
/// throw ErrorKind::Config.
void apply_json(RunConfig& config, const nlohmann::json& j);

/// Applies one textual override. `key` may use '-' in place of '_'.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

/// Reads a JSON config file on top of defaults(). Missing file is an I/O
/// error; malformed JSON or bad keys are config errors.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ordistill
