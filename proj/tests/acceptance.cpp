// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; exit status is 0 only if every selected
// criterion passes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "ordistill/checkpoint.hpp"
#include "ordistill/config.hpp"
#include "ordistill/gradcheck.hpp"
#include "ordistill/hash.hpp"
#include "ordistill/losses.hpp"
#include "ordistill/netpbm.hpp"
#include "ordistill/pipeline.hpp"
#include "support.hpp"

#ifndef ORDISTILL_CLI_PATH
#error "ORDISTILL_CLI_PATH must name the CLI binary"
#endif

using namespace ordistill;
using ordistill::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double cpu_seconds() {
    return static_cast<double>(std::clock()) / CLOCKS_PER_SEC;
}

double wall_seconds(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// 1. Gradient correctness
Outcome gradients() {
    const double t0 = cpu_seconds();
    const auto reports = gradcheck::run(std::nullopt);
    const double secs = cpu_seconds() - t0;
    bool ok = !reports.empty();
    double worst_prim = 0, worst_e2e = 0;
    std::string failed;
    for (const auto& r : reports) {
        const bool composed = r.tolerance > gradcheck::kPrimitiveTolerance;
        (composed ? worst_e2e : worst_prim) = std::max(composed ? worst_e2e : worst_prim, r.max_relative_error);
        const double limit = composed ? gradcheck::kEndToEndTolerance : gradcheck::kPrimitiveTolerance;
        if (!r.passed || !(r.max_relative_error < limit)) {
            ok = false;
            failed += " " + r.op;
        }
    }
    ok = ok && secs < 60.0;
    return {ok, fmt("%zu checks, max rel err primitive %.2e end-to-end %.2e, %.1f s CPU%s", reports.size(), worst_prim,
                    worst_e2e, secs, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

// 2. Attention-map algebra
Outcome attention_algebra() {
    std::mt19937_64 rng(20240611);
    std::uniform_int_distribution<std::size_t> batch(1, 3), channels(1, 8), extent(2, 8);
    std::uniform_real_distribution<double> u(0, 8);
    double worst_mean = 0, worst_sq = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t b = batch(rng), c = channels(rng), h = extent(rng), w = extent(rng);
        Tensor<double> f({b, c, h, w});
        for (auto& v : f.mutable_values()) v = u(rng);
        const auto m = normalize(spatial_attention(f));
        const auto& vals = m.values.values();
        for (std::size_t s = 0; s < b; ++s) {
            double mean = 0, sq = 0;
            for (std::size_t i = 0; i < h * w; ++i) {
                mean += vals[s * h * w + i];
                sq += vals[s * h * w + i] * vals[s * h * w + i];
            }
            worst_mean = std::max(worst_mean, std::abs(mean / static_cast<double>(h * w)));
            worst_sq = std::max(worst_sq, std::abs(sq - static_cast<double>(h * w)));
        }
    }

    bool exact = true;
    std::uniform_int_distribution<int> q(-1024, 1024);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> v(16), neg(16);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = q(rng) / 64.0;
            neg[i] = -v[i];
        }
        const AttentionMap<double> pm{Tensor<double>({1, 1, 4, 4}, v), AttentionStage::Normalized, 1};
        const AttentionMap<double> nm{Tensor<double>({1, 1, 4, 4}, neg), AttentionStage::Normalized, 1};
        const auto t = teacher_map(pm), pos = student_map(pm), negpart = student_map(nm);
        for (std::size_t i = 0; i < v.size(); ++i) {
            exact = exact && t.values.values()[i] == pos.values.values()[i] + negpart.values.values()[i];
        }
    }

    bool zeros = true;
    for (double level : {0.0, 0.3, 5.0}) {
        Tensor<double> f({2, 3, 5, 4});
        for (auto& v : f.mutable_values()) v = level;
        const auto m = normalize(spatial_attention(f));
        for (double v : m.values.values()) zeros = zeros && v == 0.0;
    }
    const bool ok = worst_mean < 1e-6 && worst_sq < 1e-3 && exact && zeros;
    return {ok, fmt("max |mean| %.2e, max |sum m^2 - HW| %.2e, decomposition %s, constant map %s", worst_mean, worst_sq,
                    exact ? "exact" : "INEXACT", zeros ? "zeros" : "NONZERO")};
}

// 3. Protocol invariants at desk-scale defaults
Outcome protocol() {
    const auto t0 = std::chrono::steady_clock::now();
    const double c0 = cpu_seconds();
    TempDir dir("accept3");
    RunConfig rc = RunConfig::defaults();
    rc.train.data_dir = dir / "data";
    generate(rc.dataset, rc.train.data_dir);
    const TrainingData data = TrainingData::load(rc.train.data_dir);

    // N=1 run through the full protocol
    TrainRunConfig single = rc.train;
    single.n_models = 1;
    train_sequence(single, dir / "single");
    const auto log = netpbm::read_bytes(dir / "single" / "train_log_01.csv");
    bool no_or = true;
    std::istringstream lines(log);
    std::string line;
    std::getline(lines, line);  // header
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        no_or = no_or && cells.size() >= 4 && cells[3].empty();
    }
    no_or = no_or && rows > 0;

    Model<float> m1 = load_checkpoint<float>(dir / "single" / "model_01.ckpt").model;
    m1.set_mode(ModelMode::Eval);
    const std::string ckpt1 = file_sha256(dir / "single" / "model_01.ckpt");
    const std::string h1 = parameter_hash(m1);

    bool frozen = true;
    const auto m2 = train_member<float>(rc.train, data, 2, std::vector<const Model<float>*>{&m1});
    frozen = frozen && parameter_hash(m1) == h1;
    const std::string h2 = parameter_hash(m2.model);
    train_member<float>(rc.train, data, 3, std::vector<const Model<float>*>{&m1, &m2.model});
    frozen = frozen && parameter_hash(m1) == h1 && parameter_hash(m2.model) == h2 &&
             file_sha256(dir / "single" / "model_01.ckpt") == ckpt1;

    TrainRunConfig zero = rc.train;
    zero.alpha = 0;
    const auto with_teacher = train_member<float>(zero, data, 2, std::vector<const Model<float>*>{&m1});
    const auto alone = train_member<float>(zero, data, 2, {});
    const bool bitwise = parameter_hash(with_teacher.model) == parameter_hash(alone.model);

    const double secs = cpu_seconds() - c0;
    const bool ok = no_or && frozen && bitwise && secs < 300.0;
    return {ok, fmt("teachers frozen %s, alpha=0 bitwise %s, N=1 OR terms %s, %.0f s CPU (%.0f s wall)",
                    frozen ? "yes" : "NO", bitwise ? "yes" : "NO", no_or ? "none" : "PRESENT", secs, wall_seconds(t0))};
}

// 4-6 share one experiment: alpha in {0, 0.5, 5}, N=3, three seeds.
struct Sweep {
    bool ran = false;
    std::string error;
    double cpu = 0;
    std::vector<std::map<double, ChainResult>> seeds;

    double mean_ensemble(double alpha) const {
        double s = 0;
        for (const auto& r : seeds) s += r.at(alpha).prefix_ensemble.back();
        return s / static_cast<double>(seeds.size());
    }
    double mean_single() const {
        double s = 0;
        for (const auto& r : seeds) s += r.at(0.0).model_accuracy.front();
        return s / static_cast<double>(seeds.size());
    }
    double mean_overlap(double alpha) const {
        double s = 0;
        for (const auto& r : seeds) s += r.at(alpha).overlap[0][1];
        return s / static_cast<double>(seeds.size());
    }
};

const Sweep& sweep() {
    static Sweep s = [] {
        Sweep out;
        const double c0 = cpu_seconds();
        try {
            for (std::uint64_t seed : {1, 2, 3}) {
                TempDir dir("accept4");
                RunConfig rc = RunConfig::defaults();
                rc.dataset.seed = seed;
                rc.train.seed = seed;
                rc.train.n_models = 3;
                rc.train.data_dir = dir / "data";
                generate(rc.dataset, rc.train.data_dir);
                std::map<double, ChainResult> by_alpha;
                for (auto& c : run_alpha_chains(rc, {0.0, 0.5, 5.0})) by_alpha[c.alpha] = std::move(c);
                const auto& a0 = by_alpha.at(0.0), &a5 = by_alpha.at(0.5), &a50 = by_alpha.at(5.0);
                std::printf("  seed %llu: single %.4f | ensemble a=0 %.4f a=0.5 %.4f a=5 %.4f | overlap(1,2) a=0 %.4f "
                            "a=0.5 %.4f\n",
                            static_cast<unsigned long long>(seed), a0.model_accuracy.front(),
                            a0.prefix_ensemble.back(), a5.prefix_ensemble.back(), a50.prefix_ensemble.back(),
                            a0.overlap[0][1], a5.overlap[0][1]);
                std::fflush(stdout);
                out.seeds.push_back(std::move(by_alpha));
            }
            out.ran = true;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
        out.cpu = cpu_seconds() - c0;
        return out;
    }();
    return s;
}

Outcome ensemble_gain() {
    const auto& s = sweep();
    if (!s.ran) return {false, "experiment failed: " + s.error};
    const double base = s.mean_ensemble(0.0), ours = s.mean_ensemble(0.5), single = s.mean_single();
    const bool ok = ours - base >= 0.01 && ours - single >= 0.02 && s.cpu < 1800.0;
    return {ok, fmt("ensemble a=0.5 %.2f%% vs a=0 %.2f%% (%+.2f pts), vs single %.2f%% (%+.2f pts), %.0f s CPU",
                    100 * ours, 100 * base, 100 * (ours - base), 100 * single, 100 * (ours - single), s.cpu)};
}

Outcome alpha_shape() {
    const auto& s = sweep();
    if (!s.ran) return {false, "experiment failed: " + s.error};
    const double a0 = s.mean_ensemble(0.0), a5 = s.mean_ensemble(0.5), a50 = s.mean_ensemble(5.0);
    return {a5 >= a0 && a50 <= a5, fmt("mean ensemble a=0 %.2f%%, a=0.5 %.2f%%, a=5 %.2f%%", 100 * a0, 100 * a5, 100 * a50)};
}

Outcome diversity() {
    const auto& s = sweep();
    if (!s.ran) return {false, "experiment failed: " + s.error};
    const double base = s.mean_overlap(0.0), ours = s.mean_overlap(0.5);
    const double drop = base > 0 ? 1.0 - ours / base : 0.0;
    return {ours <= 0.8 * base, fmt("overlap(1,2) a=0 %.4f, a=0.5 %.4f (%.1f%% lower)", base, ours, 100 * drop)};
}

// 7. Determinism of the CLI train command
int run_cli(const std::string& args) {
    const std::string cmd = "ORDISTILL_THREADS=1 " + std::string(ORDISTILL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
    TempDir dir("accept7");
    const std::string data = (dir / "data").string();
    const std::string scale = " --train-per-class=24 --test-per-class=6 --epochs=3 --n-models=3";
    if (run_cli("gen-data --out " + data + scale) != 0) return {false, "gen-data failed"};
    for (const char* run : {"a", "b"}) {
        if (run_cli("train --out " + (dir / run).string() + " --data-dir " + data + scale) != 0) {
            return {false, std::string("train failed for run ") + run};
        }
    }
    std::size_t compared = 0;
    std::string differ;
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir / "a")) names.insert(e.path().filename().string());
    std::set<std::string> other;
    for (const auto& e : fs::directory_iterator(dir / "b")) other.insert(e.path().filename().string());
    if (names != other) return {false, "runs wrote different file sets"};
    for (const auto& n : names) {
        ++compared;
        if (netpbm::read_bytes(dir / "a" / n) != netpbm::read_bytes(dir / "b" / n)) differ += " " + n;
    }
    const bool has_all = names.count("summary.json") && names.count("model_03.ckpt") && names.count("train_log_03.csv");
    return {differ.empty() && has_all,
            fmt("%zu files compared%s", compared, differ.empty() ? ", all byte-identical" : (", differ:" + differ).c_str())};
}

// 8. I/O round trips
Outcome round_trips() {
    TempDir dir("accept8");
    DatasetConfig dc;
    dc.train_per_class = 5;
    dc.test_per_class = 2;
    generate(dc, dir / "data");
    std::size_t images = 0;
    bool ppm = true;
    for (const auto& e : fs::recursive_directory_iterator(dir / "data")) {
        const auto ext = e.path().extension();
        if (ext != ".ppm" && ext != ".pgm") continue;
        const std::string bytes = netpbm::read_bytes(e.path());
        ppm = ppm && netpbm::encode(netpbm::decode(bytes)) == bytes;
        ++images;
    }
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<std::size_t> extent(1, 40);
    for (int trial = 0; trial < 100; ++trial) {
        netpbm::Raster r;
        r.width = extent(rng);
        r.height = extent(rng);
        r.channels = trial % 2 ? 3 : 1;
        r.pixels.resize(r.width * r.height * r.channels);
        for (auto& p : r.pixels) p = static_cast<std::uint8_t>(byte(rng));
        ppm = ppm && netpbm::decode(netpbm::encode(r)) == r;
        ++images;
    }

    bool ckpt = true;
    std::size_t models = 0;
    auto check = [&]<typename T>(T) {
        BackboneConfig bc;
        bc.num_classes = dc.num_classes;
        for (std::uint64_t seed : {1, 2, 3}) {
            bc.seed = seed;
            const Model<T> m = Model<T>::init(bc);
            CheckpointInfo info;
            info.model_index = static_cast<int>(seed);
            info.metrics = {{"test_accuracy", 0.125 * static_cast<double>(seed)}};
            const fs::path p = dir / ("m" + std::to_string(sizeof(T)) + "_" + std::to_string(seed) + ".ckpt");
            save_checkpoint(p, m, info);
            const auto back = load_checkpoint<T>(p);
            ckpt = ckpt && back.model.parameters().size() == m.parameters().size();
            for (std::size_t i = 0; ckpt && i < m.parameters().size(); ++i) {
                const auto& a = m.parameters()[i].second.values();
                const auto& b = back.model.parameters()[i].second.values();
                ckpt = ckpt && a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
            }
            ckpt = ckpt && encode_checkpoint(back.model, back.info) == netpbm::read_bytes(p);
            ++models;
        }
    };
    check(float{});
    check(double{});
    return {ppm && ckpt, fmt("%zu netpbm images %s, %zu checkpoints %s", images, ppm ? "bit-exact" : "MISMATCH", models,
                             ckpt ? "bit-exact" : "MISMATCH")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},
        {"attention-map algebra", attention_algebra},
        {"protocol invariants", protocol},
        {"ensemble gain over baseline", ensemble_gain},
        {"alpha sweep shape", alpha_shape},
        {"attention diversity", diversity},
        {"determinism", determinism},
        {"I/O round trips", round_trips},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        all = all && o.pass;
        std::printf("criterion %d %s: %s (%s)\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
