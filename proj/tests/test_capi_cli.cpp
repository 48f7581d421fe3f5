// Exercises the shared library through ordistill.h and the CLI binary.
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "ordistill.h"

#ifndef ORDISTILL_CLI_PATH
#error "ORDISTILL_CLI_PATH must name the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

class Scratch {
public:
    Scratch() {
        static std::atomic<int> n{0};
        path_ = fs::temp_directory_path() / ("ordistill_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~Scratch() {
        std::error_code ec;
        fs::permissions(path_, fs::perms::owner_all, fs::perm_options::add, ec);
        fs::remove_all(path_, ec);
    }
    std::string operator/(const std::string& s) const { return (path_ / s).string(); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const std::string& args) {
    const std::string cmd = "ORDISTILL_THREADS=1 " + std::string(ORDISTILL_CLI_PATH) + " " + args + " 2>&1";
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, got);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTinyData =
    "--num-classes=3 --patches-per-class=2 --patch-size=5 --image-size=20 --train-per-class=6 "
    "--test-per-class=3 --distractors=1";
const char* kTinyTrain = "--epochs=2 --batch-size=6 --stage-channels=4,8 --n-models=2";

}  // namespace

TEST(CApi, ConfigLifecycle) {
    ord_config* c = nullptr;
    ASSERT_EQ(ord_config_new(&c), ORD_OK);
    EXPECT_EQ(ord_config_set(c, "n-models", "2"), ORD_OK);
    EXPECT_EQ(ord_config_set(c, "no_such_key", "1"), ORD_ERR_CONFIG);
    EXPECT_NE(std::string(ord_last_error()).find("no_such_key"), std::string::npos);
    EXPECT_EQ(ord_config_set_json(c, "{\"alpha\": 0.1}"), ORD_OK);
    EXPECT_EQ(ord_config_set_json(c, "{not json"), ORD_ERR_CONFIG);
    char* json = nullptr;
    ASSERT_EQ(ord_config_to_json(c, &json), ORD_OK);
    const std::string s(json);
    ord_string_free(json);
    EXPECT_NE(s.find("\"n_models\": 2"), std::string::npos);
    EXPECT_NE(s.find("\"alpha\": 0.1"), std::string::npos);
    ord_config_free(c);
}

TEST(CApi, KeyTable) {
    ASSERT_GT(ord_config_key_count(), 20u);
    const char *name = nullptr, *type = nullptr, *help = nullptr;
    ASSERT_EQ(ord_config_key(0, &name, &type, &help), ORD_OK);
    EXPECT_STREQ(name, "n_models");
    EXPECT_EQ(ord_config_key(ord_config_key_count(), &name, &type, &help), ORD_ERR_CONFIG);
}

TEST(CApi, NullArgumentsAreConfigErrors) {
    EXPECT_EQ(ord_config_new(nullptr), ORD_ERR_CONFIG);
    EXPECT_EQ(ord_train(nullptr, "x", 1, 0, nullptr), ORD_ERR_CONFIG);
    EXPECT_EQ(ord_dataset_size(nullptr), 0u);
}

TEST(CApi, MissingFilesAreIoErrors) {
    ord_config* c = nullptr;
    EXPECT_EQ(ord_config_load("/nonexistent/run.json", &c), ORD_ERR_IO);
    ord_model* m = nullptr;
    EXPECT_EQ(ord_model_load("/nonexistent/model_01.ckpt", &m), ORD_ERR_IO);
}

TEST(CApi, GradcheckStatus) {
    char* json = nullptr;
    EXPECT_EQ(ord_gradcheck("conv2d", &json), ORD_OK);
    ord_string_free(json);
    EXPECT_EQ(ord_gradcheck("faulty_square", nullptr), ORD_VERIFY_FAILED);
    EXPECT_EQ(ord_gradcheck("bogus", nullptr), ORD_ERR_CONFIG);
}

TEST(CApi, TrainPredictRoundTrip) {
    Scratch s;
    ord_config* c = nullptr;
    ASSERT_EQ(ord_config_new(&c), ORD_OK);
    for (auto [k, v] : {std::pair{"num_classes", "3"}, {"patches_per_class", "2"}, {"patch_size", "5"},
                        {"image_size", "20"}, {"train_per_class", "6"}, {"test_per_class", "3"},
                        {"distractors", "1"}, {"epochs", "2"}, {"batch_size", "6"}, {"stage_channels", "4,8"},
                        {"n_models", "1"}}) {
        ASSERT_EQ(ord_config_set(c, k, v), ORD_OK) << k;
    }
    ASSERT_EQ(ord_generate_dataset(c, (s / "data").c_str()), ORD_OK) << ord_last_error();
    ASSERT_EQ(ord_config_set(c, "data_dir", (s / "data").c_str()), ORD_OK);
    ASSERT_EQ(ord_train(c, (s / "run").c_str(), 1, 0, nullptr), ORD_OK) << ord_last_error();
    EXPECT_EQ(ord_train(c, (s / "run").c_str(), 1, 0, nullptr), ORD_ERR_IO);
    ord_config_free(c);

    ord_dataset* d = nullptr;
    ASSERT_EQ(ord_dataset_load((s / "data").c_str(), "test", &d), ORD_OK);
    ASSERT_EQ(ord_dataset_size(d), 9u);
    ord_model* m = nullptr;
    ASSERT_EQ(ord_model_load((s / "run/model_01.ckpt").c_str(), &m), ORD_OK);
    EXPECT_EQ(ord_model_num_classes(m), 3u);
    std::vector<int> pred(9, -1);
    ASSERT_EQ(ord_model_predict(m, d, pred.data()), ORD_OK);
    int label = -1;
    EXPECT_EQ(ord_dataset_label(d, 0, &label), ORD_OK);
    EXPECT_GE(label, 0);
    EXPECT_EQ(ord_dataset_label(d, 9, &label), ORD_ERR_RUNTIME);
    for (int p : pred) {
        EXPECT_GE(p, 0);
        EXPECT_LT(p, 3);
    }
    ord_model_free(m);
    ord_dataset_free(d);
}

TEST(Cli, HelpOnEverySubcommandListsEveryKey) {
    for (const char* sub : {"", "gen-data", "train", "eval", "export-attention", "gradcheck", "ablate"}) {
        const auto r = cli(std::string(sub) + " --help");
        EXPECT_EQ(r.code, 0) << sub;
        for (std::size_t i = 0; i < ord_config_key_count(); ++i) {
            const char* name = nullptr;
            ord_config_key(i, &name, nullptr, nullptr);
            std::string flag = name;
            for (char& ch : flag)
                if (ch == '_') ch = '-';
            const bool listed = r.out.find(name) != std::string::npos || r.out.find("--" + flag) != std::string::npos;
            EXPECT_TRUE(listed) << sub << " missing " << name;
        }
    }
}

TEST(Cli, GenDataErrors) {
    Scratch s;
    EXPECT_EQ(cli("gen-data --out " + (s / "d") + " --num-classes=30 --patches-per-class=3").code, 2);
    EXPECT_EQ(cli("gen-data --out " + (s / "d") + " --no-such-key=1").code, 2);
    EXPECT_EQ(cli("gen-data --out " + (s / "d") + " --epochs=ten").code, 2);
    if (::geteuid() != 0) {
        fs::create_directories(s.path() / "ro");
        fs::permissions(s.path() / "ro", fs::perms::owner_read | fs::perms::owner_exec);
        EXPECT_EQ(cli("gen-data --out " + (s / "ro/d") + " " + kTinyData).code, 3);
    }
    // A regular file where the output directory should go cannot be written even as root.
    std::ofstream(s / "file") << "x";
    EXPECT_EQ(cli("gen-data --out " + (s / "file/d") + " " + kTinyData).code, 3);
}

TEST(Cli, TrainMissingDatasetIsIoError) {
    Scratch s;
    const auto r = cli("train --out " + (s / "run") + " --data-dir=" + (s / "absent") + " " + kTinyTrain);
    EXPECT_EQ(r.code, 3) << r.out;
}

TEST(Cli, EndToEndPipeline) {
    Scratch s;
    ASSERT_EQ(cli("gen-data --out " + (s / "data") + " " + kTinyData).code, 0);

    const std::string cfg = s / "run.json";
    std::ofstream(cfg) << "{\"data_dir\": \"" << (s / "data") << "\", \"epochs\": 2, \"batch_size\": 6, "
                       << "\"stage_channels\": [4, 8], \"n_models\": 2}";
    auto r = cli("train --config " + cfg + " --out " + (s / "run"));
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"model_01.ckpt", "model_02.ckpt", "train_log_01.csv", "train_log_02.csv", "summary.json",
                          "config.json"}) {
        EXPECT_TRUE(fs::exists(s.path() / "run" / f)) << f;
    }
    EXPECT_NE(slurp(s / "run/config.json").find("\"warmup_fraction\""), std::string::npos);
    EXPECT_EQ(cli("train --config " + cfg + " --out " + (s / "run")).code, 3);

    r = cli("eval --run " + (s / "run") + " --out " + (s / "eval.json") + " --overlap-out " + (s / "ov.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("ensemble"), std::string::npos);
    EXPECT_TRUE(fs::exists(s.path() / "ov.csv"));
    EXPECT_EQ(cli("eval --run " + (s / "run") + " --out " + (s / "eval.json")).code, 3);
    EXPECT_EQ(cli("eval --run " + (s / "run") + " --subset=1 --out " + (s / "eval.json") + " --force").code, 0);
    EXPECT_NE(slurp(s / "eval.json").find("\"n_models\": 1"), std::string::npos);

    r = cli("export-attention --run " + (s / "run") + " --ids train_000000 --split train --out " + (s / "heat"));
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(cli("export-attention --run " + (s / "run") + " --ids nope --out " + (s / "heat")).code, 2);

    // Corrupt a checkpoint: eval reports it by name with exit 4.
    fs::copy(s.path() / "run", s.path() / "bad", fs::copy_options::recursive);
    {
        std::string bytes = slurp(s / "bad/model_02.ckpt");
        std::ofstream(s / "bad/model_02.ckpt", std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 3);
    }
    r = cli("eval --run " + (s / "bad"));
    EXPECT_EQ(r.code, 4) << r.out;
    EXPECT_NE(r.out.find("model_02.ckpt"), std::string::npos);
}

TEST(Cli, SingleModelRunHasNoOrColumn) {
    Scratch s;
    ASSERT_EQ(cli("gen-data --out " + (s / "data") + " " + kTinyData).code, 0);
    const auto r = cli("train --out " + (s / "run") + " --data-dir=" + (s / "data") + " " + kTinyTrain +
                       " --n-models=1");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_FALSE(fs::exists(s.path() / "run/model_02.ckpt"));
    std::istringstream log(slurp(s / "run/train_log_01.csv"));
    std::string line;
    std::getline(log, line);
    while (std::getline(log, line)) EXPECT_NE(line.find(",,"), std::string::npos) << line;
}

TEST(Cli, Gradcheck) {
    Scratch s;
    auto r = cli("gradcheck --op=conv2d --out " + (s / "gc.json"));
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("conv2d"), std::string::npos);
    EXPECT_EQ(cli("gradcheck --op=conv2d --out " + (s / "gc.json")).code, 3);
    EXPECT_EQ(cli("gradcheck --op=faulty_square").code, 1);
    EXPECT_EQ(cli("gradcheck --op=bogus").code, 2);
}

TEST(Cli, AblateWritesCsvAndRefusesOverwrite) {
    Scratch s;
    ASSERT_EQ(cli("gen-data --out " + (s / "data") + " " + kTinyData).code, 0);
    const std::string common = " --data-dir=" + (s / "data") + " --epochs=1 --batch-size=6 --stage-channels=4,8";
    auto r = cli("ablate --alphas=0,0.5 --n-models=2 --out " + (s / "a.csv") + common);
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string csv = slurp(s / "a.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(cli("ablate --alphas=0,0.5 --n-models=2 --out " + (s / "a.csv") + common).code, 3);
    r = cli("ablate --n-range=1..3 --out " + (s / "n.csv") + common);
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string ncsv = slurp(s / "n.csv");
    EXPECT_EQ(ncsv.rfind("n_models,single_base,ensemble_base,single_ours,ensemble_ours\n", 0), 0u);
    EXPECT_EQ(std::count(ncsv.begin(), ncsv.end(), '\n'), 4);
    EXPECT_EQ(cli("ablate --n-range=3..1 --out " + (s / "m.csv") + common).code, 2);
    EXPECT_EQ(cli("ablate --out " + (s / "m.csv") + common).code, 2);
}

TEST(Cli, GenDataIsIdempotent) {
    Scratch s;
    ASSERT_EQ(cli("gen-data --out " + (s / "a") + " " + kTinyData).code, 0);
    ASSERT_EQ(cli("gen-data --out " + (s / "a") + " " + kTinyData).code, 0);
    ASSERT_EQ(cli("gen-data --out " + (s / "b") + " " + kTinyData).code, 0);
    EXPECT_EQ(slurp(s / "a/manifest.json"), slurp(s / "b/manifest.json"));
}
