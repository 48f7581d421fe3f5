#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "ordistill/dataset.hpp"
#include "ordistill/trainer.hpp"

namespace ordistill::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ordistill_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// 3 classes of 20x20 images; small enough to train in well under a second.
inline DatasetConfig tiny_dataset_config(std::uint64_t seed = 7) {
    DatasetConfig c;
    c.num_classes = 3;
    c.patches_per_class = 2;
    c.patch_size = 5;
    c.image_size = 20;
    c.train_per_class = 6;
    c.test_per_class = 3;
    c.distractors = 1;
    c.seed = seed;
    return c;
}

inline TrainRunConfig tiny_train_config(const std::filesystem::path& data_dir) {
    TrainRunConfig c;
    c.n_models = 2;
    c.epochs = 2;
    c.batch_size = 6;
    c.stage_channels = {4, 8};
    c.data_dir = data_dir;
    return c;
}

}  // namespace ordistill::testing
