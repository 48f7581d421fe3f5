#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "ordistill/checkpoint.hpp"
#include "ordistill/hash.hpp"
#include "ordistill/netpbm.hpp"
#include "ordistill/serialize.hpp"
#include "support.hpp"

using namespace ordistill;
using ordistill::testing::TempDir;

namespace {

netpbm::Raster random_raster(std::size_t w, std::size_t h, std::size_t channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    netpbm::Raster r{w, h, channels, std::vector<std::uint8_t>(w * h * channels)};
    for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    return r;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Contract;
}

}  // namespace

TEST(Netpbm, RoundTripIsExact) {
    for (std::size_t ch : {1u, 3u}) {
        const auto r = random_raster(7, 5, ch, ch);
        EXPECT_EQ(netpbm::decode(netpbm::encode(r)), r);
    }
}

TEST(Netpbm, HeaderLayout) {
    const netpbm::Raster r{2, 1, 3, {1, 2, 3, 4, 5, 6}};
    EXPECT_EQ(netpbm::encode(r), std::string("P6\n2 1\n255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6));
}

TEST(Netpbm, CommentsAndWhitespaceInHeader) {
    const std::string bytes = std::string("P5 # gray\n  2\t# w\n1\n255\n") + std::string("\x07\x08", 2);
    const auto r = netpbm::decode(bytes);
    EXPECT_EQ(r.width, 2u);
    EXPECT_EQ(r.channels, 1u);
    EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{7, 8}));
}

TEST(Netpbm, MalformedInputsAreFormatErrors) {
    EXPECT_EQ(kind_of([] { netpbm::decode("P3\n1 1\n255\n0 0 0"); }), ErrorKind::Format);
    EXPECT_EQ(kind_of([] { netpbm::decode("P6\n2 2\n255\n\x01"); }), ErrorKind::Format);
    EXPECT_EQ(kind_of([] { netpbm::decode("P5\n1 1\n65535\n\x01\x02"); }), ErrorKind::Format);
    EXPECT_EQ(kind_of([] { netpbm::decode(""); }), ErrorKind::Format);
}

TEST(Netpbm, MissingFileIsIoError) {
    EXPECT_EQ(kind_of([] { netpbm::read_file("/nonexistent/x.ppm"); }), ErrorKind::Io);
}

TEST(TensorBlob, RoundTripAndConversion) {
    Tensor<double> t({2, 3}, std::vector<double>{0.1, -2, 3e-8, 4, 5.5, -0.0});
    const auto back = decode_tensor<double>(encode_tensor(t));
    EXPECT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back.values()[i], t.values()[i]);
    const auto as_float = decode_tensor<float>(encode_tensor(t));
    EXPECT_EQ(as_float.values()[0], 0.1f);
    EXPECT_EQ(encode_tensor(t).substr(0, 4), "ODT1");
}

TEST(TensorBlob, TruncationAndBadMagicAreCorrupt) {
    const auto bytes = encode_tensor(Tensor<float>({4}, 1.0f));
    EXPECT_EQ(kind_of([&] { decode_tensor<float>(bytes.substr(0, bytes.size() - 1)); }), ErrorKind::Corrupt);
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_EQ(kind_of([&] { decode_tensor<float>(bad); }), ErrorKind::Corrupt);
}

TEST(Checkpoint, SaveLoadIsBitExact) {
    TempDir dir("ckpt");
    BackboneConfig c;
    c.seed = 5;
    c.blocks_per_stage = 2;
    const auto m = Model<float>::init(c);
    CheckpointInfo info;
    info.model_index = 3;
    info.epoch = 7;
    info.rng_state = "state";
    info.metrics = {{"test_accuracy", 0.5}};
    save_checkpoint(dir / "m.ckpt", m, info);
    const auto loaded = load_checkpoint<float>(dir / "m.ckpt");
    EXPECT_EQ(loaded.model.config(), c);
    EXPECT_EQ(parameter_hash(loaded.model), parameter_hash(m));
    EXPECT_EQ(loaded.info.model_index, 3);
    EXPECT_EQ(loaded.info.epoch, 7);
    EXPECT_EQ(loaded.info.rng_state, "state");
    EXPECT_EQ(loaded.info.metrics, info.metrics);
    EXPECT_EQ(encode_checkpoint(loaded.model, loaded.info), encode_checkpoint(m, info));
}

TEST(Checkpoint, CorruptFileNamesThePath) {
    TempDir dir("ckpt_bad");
    const auto m = Model<float>::init(BackboneConfig{});
    save_checkpoint(dir / "m.ckpt", m, CheckpointInfo{});
    std::string bytes = netpbm::read_bytes(dir / "m.ckpt");
    netpbm::write_bytes(dir / "trunc.ckpt", bytes.substr(0, bytes.size() / 2));
    try {
        load_checkpoint<float>(dir / "trunc.ckpt");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Corrupt);
        EXPECT_NE(std::string(e.what()).find("trunc.ckpt"), std::string::npos);
    }
    bytes[0] = 'Z';
    netpbm::write_bytes(dir / "magic.ckpt", bytes);
    EXPECT_EQ(kind_of([&] { load_checkpoint<float>(dir / "magic.ckpt"); }), ErrorKind::Corrupt);
    EXPECT_EQ(kind_of([&] { load_checkpoint<float>(dir / "absent.ckpt"); }), ErrorKind::Io);
}

TEST(Hash, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Glyphs, AlphabetSpacingAndDeterminism) {
    const auto a = make_glyph_alphabet(26, 6, 3);
    ASSERT_EQ(a.size(), 26u);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) EXPECT_GE(a[i].hamming(a[j]), kMinGlyphDistance);
    EXPECT_EQ(a, make_glyph_alphabet(26, 6, 3));
    EXPECT_EQ(Glyph::from_hex(6, a[4].hex()), a[4]);
    EXPECT_THROW(make_glyph_alphabet(kGlyphAlphabetSize + 1, 6, 3), Error);
}

TEST(DatasetConfig, Validation) {
    DatasetConfig c;
    EXPECT_NO_THROW(c.validate());
    c.num_classes = 30;
    c.patches_per_class = 3;  // 90 glyphs
    EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::Config);
    c = DatasetConfig{};
    c.image_size = 10;
    EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::Config);
    c = DatasetConfig{};
    c.fade_prob = 1.5;
    EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::Config);
    EXPECT_EQ(DatasetConfig::from_json(DatasetConfig{}.to_json()), DatasetConfig{});
}

TEST(Dataset, GenerationIsAPureFunctionOfConfig) {
    TempDir a("gen_a"), b("gen_b");
    const auto cfg = ordistill::testing::tiny_dataset_config(3);
    const auto ma = generate(cfg, a.path());
    generate(cfg, b.path());
    EXPECT_EQ(ma.images.size(), 3u * (6 + 3));
    for (const auto& rec : ma.images) {
        EXPECT_EQ(file_sha256(a / rec.filename), file_sha256(b / rec.filename)) << rec.filename;
    }
    EXPECT_EQ(file_sha256(a / "manifest.json"), file_sha256(b / "manifest.json"));
    EXPECT_EQ(file_sha256(a / "labels.csv"), file_sha256(b / "labels.csv"));
}

TEST(Dataset, ManifestRoundTripAndStructure) {
    TempDir dir("gen_m");
    const auto cfg = ordistill::testing::tiny_dataset_config();
    const auto m = generate(cfg, dir.path());
    const auto back = read_manifest(dir.path());
    EXPECT_EQ(back.config, cfg);
    EXPECT_EQ(back.glyphs, m.glyphs);
    EXPECT_EQ(back.to_json(), m.to_json());
    ASSERT_EQ(m.class_glyphs.size(), cfg.num_classes);
    for (const auto& rec : m.images) {
        std::size_t class_patches = 0;
        for (const auto& p : rec.patches) {
            EXPECT_LE(p.x + cfg.patch_size, cfg.image_size);
            EXPECT_LE(p.y + cfg.patch_size, cfg.image_size);
            if (!p.distractor) ++class_patches;
        }
        EXPECT_EQ(class_patches, cfg.patches_per_class);
    }
}

TEST(Dataset, LoadSortsByIdAndReadsPixels) {
    TempDir dir("gen_l");
    const auto cfg = ordistill::testing::tiny_dataset_config();
    generate(cfg, dir.path());
    const auto train = load(dir.path(), "train");
    const auto test = load(dir.path(), "test");
    EXPECT_EQ(train.size(), 18u);
    EXPECT_EQ(test.size(), 9u);
    for (std::size_t i = 1; i < train.size(); ++i) EXPECT_LT(train[i - 1].id, train[i].id);
    EXPECT_EQ(train[0].rgb.size(), 20u * 20u * 3u);
    const auto px = train[0].pixels<float>();
    EXPECT_EQ(px.shape(), (Shape{3, 20, 20}));
    EXPECT_FLOAT_EQ(px.values()[0], train[0].rgb[0] / 255.0f);
    EXPECT_EQ(make_batch<double>(std::span(train).subspan(0, 4)).shape(), (Shape{4, 3, 20, 20}));
    EXPECT_EQ(kind_of([&] { load(dir.path(), "val"); }), ErrorKind::Config);
}

TEST(Dataset, FadedSalientGlyphs) {
    TempDir dir("gen_f");
    auto cfg = ordistill::testing::tiny_dataset_config();
    cfg.fade_prob = 1.0;
    const auto m = generate(cfg, dir.path());
    for (const auto& rec : m.images) {
        std::size_t faded = 0;
        for (const auto& p : rec.patches) faded += p.faded;
        EXPECT_EQ(faded, 1u);
    }
}

TEST(Augment, IdentityChoiceAndFlip) {
    LabeledImage img{"x", 0, 2, 3, {}};
    for (std::uint8_t i = 0; i < 18; ++i) img.rgb.push_back(i);
    EXPECT_EQ(augment(img, AugmentChoice{}).rgb, img.rgb);
    const auto flipped = augment(img, AugmentChoice{.flip = true});
    // first row reversed pixel-wise: pixel 2 first
    EXPECT_EQ(flipped.rgb[0], 6);
    EXPECT_EQ(flipped.rgb[3], 3);
    EXPECT_EQ(flipped.rgb[6], 0);
    const auto shifted = augment(img, AugmentChoice{.flip = false, .offset_x = kAugmentPad + 1, .offset_y = kAugmentPad});
    EXPECT_EQ(shifted.rgb[0], 3);   // moved left by one
    EXPECT_EQ(shifted.rgb[6], 6);   // edge replicated
}

TEST(Augment, KeepsSizeAndLabel) {
    std::mt19937_64 rng(1);
    LabeledImage img{"x", 4, 8, 8, std::vector<std::uint8_t>(8 * 8 * 3, 9)};
    for (int i = 0; i < 20; ++i) {
        const auto a = augment(img, rng);
        EXPECT_EQ(a.label, 4);
        EXPECT_EQ(a.rgb.size(), img.rgb.size());
    }
}
