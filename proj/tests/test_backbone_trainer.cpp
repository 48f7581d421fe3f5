#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "ordistill/ensemble.hpp"
#include "ordistill/hash.hpp"
#include "ordistill/ops.hpp"
#include "support.hpp"

using namespace ordistill;
using ordistill::testing::TempDir;

TEST(Backbone, DefaultParameterCount) {
    BackboneConfig c;
    c.num_classes = 10;
    const auto m = Model<float>::init(c);
    // 3 convs (3->16->32->64, 3x3, biased) plus a 64x10 classifier.
    EXPECT_EQ(m.parameter_count(), 448u + 4640u + 18496u + 650u);
    EXPECT_EQ(m.parameter_count(), 24234u);
    bool found = false;
    for (const auto& [name, t] : m.parameters()) {
        if (Model<float>::is_classifier_parameter(name) && t.rank() == 2) {
            EXPECT_EQ(t.shape(), (Shape{10, 64}));
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(Backbone, LayoutMatchesInit) {
    BackboneConfig c;
    c.blocks_per_stage = 2;
    const auto layout = parameter_layout(c);
    const auto m = Model<double>::init(c);
    ASSERT_EQ(layout.size(), m.parameters().size());
    for (std::size_t i = 0; i < layout.size(); ++i) {
        EXPECT_EQ(layout[i].first, m.parameters()[i].first);
        EXPECT_EQ(layout[i].second, m.parameters()[i].second.shape());
    }
}

TEST(Backbone, ForwardShapes) {
    BackboneConfig c;
    const auto m = Model<float>::init(c);
    const auto out = m.forward(Tensor<float>({2, 3, 32, 32}, 0.5f));
    EXPECT_EQ(out.features.shape(), (Shape{2, 64, 4, 4}));
    EXPECT_EQ(out.logits.shape(), (Shape{2, 8}));
    EXPECT_EQ(c.feature_height(), 4u);
}

TEST(Backbone, SeededInitIsReproducible) {
    BackboneConfig c;
    c.seed = 42;
    EXPECT_EQ(parameter_hash(Model<float>::init(c)), parameter_hash(Model<float>::init(c)));
    BackboneConfig other = c;
    other.seed = 43;
    EXPECT_NE(parameter_hash(Model<float>::init(c)), parameter_hash(Model<float>::init(other)));
}

TEST(Backbone, InitStatistics) {
    BackboneConfig c;
    c.stage_channels = {64};
    c.input_height = c.input_width = 16;
    const auto m = Model<double>::init(c);
    const auto& w = m.parameters().front().second;  // 64 x 3 x 3 x 3, fan_in 27
    double sq = 0;
    for (double v : w.values()) sq += v * v;
    const double var = sq / static_cast<double>(w.numel());
    EXPECT_NEAR(var, 2.0 / 27.0, 0.2 * 2.0 / 27.0);
}

TEST(Backbone, TooSmallFeaturePlaneIsConfigError) {
    BackboneConfig c;
    c.input_height = c.input_width = 16;  // three poolings leave 2x2
    try {
        c.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}

TEST(Backbone, CloneIsIndependent) {
    auto m = Model<float>::init(BackboneConfig{});
    auto copy = m.clone();
    const auto before = parameter_hash(copy);
    m.parameters()[0].second.mutable_values()[0] += 1.0f;
    EXPECT_EQ(parameter_hash(copy), before);
}

TEST(Sgd, MomentumSequenceOracle) {
    std::vector<double> p{0}, v{0};
    const std::vector<double> g{1};
    sgd_step<double>(p, g, v, 1.0, 0.9, 0.0);
    EXPECT_DOUBLE_EQ(p[0], -1.0);
    sgd_step<double>(p, g, v, 1.0, 0.9, 0.0);
    EXPECT_DOUBLE_EQ(p[0], -2.9);
}

TEST(Sgd, WeightDecayOnly) {
    std::vector<double> p{1}, v{0};
    const std::vector<double> g{0};
    sgd_step<double>(p, g, v, 1.0, 0.0, 0.05);
    EXPECT_DOUBLE_EQ(p[0], 0.95);
}

TEST(Sgd, SizeMismatchIsShapeError) {
    std::vector<float> p{1, 2}, v{0};
    const std::vector<float> g{0, 0};
    EXPECT_THROW(sgd_step<float>(p, g, v, 0.1, 0.9, 0.0), Error);
}

TEST(Schedule, CosineOracle) {
    EXPECT_NEAR(cosine_lr(3, 4, 0.01), 0.0014645, 1e-7);
    EXPECT_DOUBLE_EQ(cosine_lr(0, 10, 0.01), 0.01);
    EXPECT_THROW(cosine_lr(4, 4, 0.01), Error);
    for (std::size_t e = 1; e < 20; ++e) EXPECT_LT(cosine_lr(e, 20, 1.0), cosine_lr(e - 1, 20, 1.0));
}

TEST(Optimizer, FeatureAndClassifierLearningRates) {
    BackboneConfig c;
    c.stage_channels = {2};
    c.input_height = c.input_width = 8;
    c.num_classes = 2;
    auto m = Model<double>::init(c);
    auto before = m.clone();
    for (auto& [name, t] : m.parameters()) {
        auto& g = detail::grad_buffer(*t.storage());
        std::fill(g.begin(), g.end(), 1.0);
    }
    SgdOptimizer<double> opt(m);
    opt.step(m, 0.1, 0.5, 0.0, 0.0);
    EXPECT_EQ(opt.steps(), 1u);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        const double lr = Model<double>::is_classifier_parameter(m.parameters()[i].first) ? 0.5 : 0.1;
        EXPECT_DOUBLE_EQ(m.parameters()[i].second.values()[0], before.parameters()[i].second.values()[0] - lr);
    }
}

TEST(Optimizer, GradClipScalesJointNorm) {
    BackboneConfig c;
    c.stage_channels = {2};
    c.input_height = c.input_width = 8;
    c.num_classes = 2;
    auto m = Model<double>::init(c);
    std::size_t count = 0;
    for (auto& [name, t] : m.parameters()) {
        auto& g = detail::grad_buffer(*t.storage());
        std::fill(g.begin(), g.end(), 2.0);
        count += g.size();
    }
    const double norm = 2.0 * std::sqrt(static_cast<double>(count));
    EXPECT_NEAR(clip_grad_norm(m, 1e9), norm, 1e-9);
    EXPECT_EQ(m.parameters()[0].second.grad()[0], 2.0);
    EXPECT_NEAR(clip_grad_norm(m, 1.5), norm, 1e-9);
    double sq = 0;
    for (auto& [name, t] : m.parameters()) {
        for (double g : t.grad()) {
            EXPECT_NEAR(g, 1.5 / std::sqrt(static_cast<double>(count)), 1e-12);
            sq += g * g;
        }
    }
    EXPECT_NEAR(std::sqrt(sq), 1.5, 1e-9);
}

TEST(TrainConfig, Validation) {
    TrainRunConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.seeds = {1, 2};
    EXPECT_THROW(bad.validate(), Error);
    bad = c;
    bad.warmup_fraction = 1.0;
    EXPECT_THROW(bad.validate(), Error);
    bad = c;
    bad.alpha = -1;
    EXPECT_THROW(bad.validate(), Error);
    bad = c;
    bad.schedule = "step";
    EXPECT_THROW(bad.validate(), Error);
    bad = c;
    bad.grad_clip = -0.5;
    EXPECT_THROW(bad.validate(), Error);
    EXPECT_EQ(c.model_seed(1), c.seed);
    EXPECT_EQ(c.model_seed(3), c.seed + 2);
    c.seeds = {9, 8, 7, 6, 5};
    EXPECT_EQ(c.model_seed(2), 8u);
}

TEST(TrainLog, CsvFormat) {
    StepRecord a;
    a.step = 1;
    a.loss = total_loss(1.0, {}, 0.5);
    a.lr = 0.01;
    StepRecord b;
    b.step = 2;
    b.model_index = 2;
    b.loss = total_loss(1.0, {0.5}, 0.5);
    b.lr = 0.01;
    const std::vector<StepRecord> records{a, b};
    EXPECT_EQ(training_log_csv(records),
              "step,model_index,ce,or_mean,total,lr\n1,1,1,,1,0.01\n2,2,1,0.5,1.25,0.01\n");
}

class TinyRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("tinyrun");
        generate(ordistill::testing::tiny_dataset_config(), dir_->path() / "data");
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static std::filesystem::path data() { return dir_->path() / "data"; }
    static TempDir* dir_;
};

TempDir* TinyRun::dir_ = nullptr;

TEST_F(TinyRun, TrainingLowersTheLoss) {
    auto c = ordistill::testing::tiny_train_config(data());
    c.epochs = 8;
    c.augment = false;
    const auto d = TrainingData::load(data());
    const auto m = train_member<double>(c, d, 1, {});
    ASSERT_FALSE(m.log.empty());
    EXPECT_LT(m.log.back().loss.ce, m.log.front().loss.ce);
    for (const auto& r : m.log) EXPECT_TRUE(r.loss.or_terms.empty());
}

TEST_F(TinyRun, StudentLogsOneOrTermPerTeacher) {
    const auto c = ordistill::testing::tiny_train_config(data());
    const auto d = TrainingData::load(data());
    const auto first = train_member<float>(c, d, 1, {});
    const auto second = train_member<float>(c, d, 2, std::vector<const Model<float>*>{&first.model});
    const std::vector<const Model<float>*> two{&first.model, &second.model};
    const auto third = train_member<float>(c, d, 3, two);
    for (const auto& r : third.log) {
        ASSERT_EQ(r.loss.or_terms.size(), 2u);
        for (double v : r.loss.or_terms) EXPECT_GE(v, 0.0);
    }
    EXPECT_EQ(third.info.metrics.at("teachers"), 2);
}

TEST_F(TinyRun, AlphaZeroStudentEqualsCeOnlyModel) {
    auto c = ordistill::testing::tiny_train_config(data());
    c.alpha = 0;
    const auto d = TrainingData::load(data());
    const auto first = train_member<float>(c, d, 1, {});
    const auto student = train_member<float>(c, d, 2, std::vector<const Model<float>*>{&first.model});
    const auto alone = train_member<float>(c, d, 2, {});
    EXPECT_EQ(parameter_hash(student.model), parameter_hash(alone.model));
}

TEST(TrainRunConfig, WarmupEpochsFromFraction) {
    TrainRunConfig c;
    EXPECT_EQ(c.warmup_epochs(), 10u);  // a third of 30
    c.epochs = 2;
    EXPECT_EQ(c.warmup_epochs(), 0u);
    c.warmup_fraction = 0;
    c.epochs = 30;
    EXPECT_EQ(c.warmup_epochs(), 0u);
}

TEST_F(TinyRun, WarmupEpochsIgnoreTeachers) {
    auto c = ordistill::testing::tiny_train_config(data());
    c.epochs = 3;
    c.warmup_fraction = 0.4;
    const auto d = TrainingData::load(data());
    const auto first = train_member<double>(c, d, 1, {});
    const auto student = train_member<double>(c, d, 2, std::vector<const Model<double>*>{&first.model});
    const std::size_t per_epoch = student.log.size() / 3;
    for (std::size_t i = 0; i < student.log.size(); ++i) {
        const auto& l = student.log[i].loss;
        if (i < per_epoch) {
            EXPECT_DOUBLE_EQ(l.total, l.ce);
        } else {
            EXPECT_DOUBLE_EQ(l.alpha, c.alpha);
        }
    }
}

TEST_F(TinyRun, SequenceWritesArtifactsAndKeepsTeachersFrozen) {
    TempDir out("seq");
    auto c = ordistill::testing::tiny_train_config(data());
    c.n_models = 3;
    const auto summary = train_sequence(c, out.path(), nlohmann::json{{"echo", true}});
    ASSERT_EQ(summary.checkpoints.size(), 3u);
    for (const char* f : {"model_01.ckpt", "model_02.ckpt", "model_03.ckpt", "train_log_01.csv", "train_log_03.csv",
                          "config.json", "summary.json"}) {
        EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
    }
    EXPECT_EQ(summary.json.at("models").size(), 3u);
    EXPECT_EQ(summary.json.at("ensemble").size(), 3u);
    EXPECT_EQ(summary.json.at("config").at("echo"), true);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(summary.json["models"][i]["sha256"], file_sha256(summary.checkpoints[i]));
    }
}

TEST_F(TinyRun, ObserverSeesEveryStep) {
    const auto c = ordistill::testing::tiny_train_config(data());
    const auto d = TrainingData::load(data());
    std::size_t seen = 0;
    const auto m = train_member<float>(c, d, 1, {}, [&](const StepRecord&) { ++seen; });
    EXPECT_EQ(seen, m.log.size());
    // 18 images in batches of 6, two epochs
    EXPECT_EQ(seen, 6u);
}

TEST(TrainingData, MissingDirectoryIsIoError) {
    try {
        TrainingData::load("/nonexistent/ordistill");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
    }
}

TEST(SinglePatchProbe, ProbeSetBeatsChance) {
    TempDir dir("probe");
    DatasetConfig dc;
    dc.num_classes = 4;
    dc.train_per_class = 100;
    dc.test_per_class = 10;
    dc.salient_contrast = 0.8;
    dc.subtle_contrast = 0.8;
    dc.flip_prob = 0;
    dc.fade_prob = 0;
    generate(dc, dir / "data");
    TrainRunConfig c;
    c.data_dir = dir / "data";
    c.epochs = 20;
    c.batch_size = 8;
    const auto data = TrainingData::load(c.data_dir);
    auto m = train_member<float>(c, data, 1, {});
    m.model.set_mode(ModelMode::Eval);

    const auto manifest = read_manifest(c.data_dir);
    std::map<std::string, const ImageRecord*> records;
    for (const auto& r : manifest.images) records[r.id] = &r;
    std::mt19937_64 rng(3);
    std::vector<LabeledImage> probes;
    std::vector<int> labels;
    for (std::size_t slot = 0; slot < dc.patches_per_class; ++slot) {
        for (const auto& im : data.test) {
            const ImageRecord& rec = *records.at(im.id);
            std::size_t seen = 0, keep = 0;
            for (std::size_t i = 0; i < rec.patches.size(); ++i) {
                if (!rec.patches[i].distractor && seen++ == slot) keep = i;
            }
            probes.push_back(mask_patches(im, rec, manifest, keep, rng));
            labels.push_back(im.label);
        }
    }
    // every test image once per class glyph, the others painted over
    const auto scores = class_scores(m.model, probes, EnsembleMode::Probabilities);
    EXPECT_GT(top1_accuracy(argmax_rows(scores, dc.num_classes), labels), 1.0 / static_cast<double>(dc.num_classes) + 0.1);
}
