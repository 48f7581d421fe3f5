#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordistill/netpbm.hpp"
#include "ordistill/tensor.hpp"

namespace ordistill {

/// Upper bound on distinct glyphs (class glyphs plus shared distractors).
inline constexpr std::size_t kGlyphAlphabetSize = 64;
/// Minimum pairwise Hamming distance between glyph bitmaps.
inline constexpr std::size_t kMinGlyphDistance = 10;

struct DatasetConfig {
    std::size_t num_classes = 8;
    std::size_t patches_per_class = 3;
    std::size_t patch_size = 6;
    std::size_t image_size = 32;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 40;
    std::size_t distractors = 2;  // glyphs shared by every class
    std::uint64_t seed = 1;

    // Rendering, in [0,1] intensity units.
    double background_noise = 0.06;
    double salient_contrast = 0.8;  // first glyph of each class and distractors
    double subtle_contrast = 0.3;   // remaining class glyphs
    double flip_prob = 0.04;        // per-bit flips on every glyph instance
    double fade_prob = 0.3;         // chance the salient glyph of an image is rendered faint
    double fade_contrast = 0.05;    // contrast of a faded salient glyph

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetConfig from_json(const nlohmann::json& j);

    bool operator==(const DatasetConfig&) const = default;
};

struct Glyph {
    std::size_t size = 0;
    std::vector<std::uint8_t> bits;  // row-major, 0/1

    std::size_t hamming(const Glyph& other) const;
    /// Bits packed MSB-first, zero padded to whole hex digits.
    std::string hex() const;
    static Glyph from_hex(std::size_t size, const std::string& hex);

    bool operator==(const Glyph&) const = default;
};

/// Seeded rejection sampling of `count` glyphs with pairwise distance at
/// least kMinGlyphDistance. Throws ErrorKind::Config when count exceeds the
/// alphabet.
std::vector<Glyph> make_glyph_alphabet(std::size_t count, std::size_t size, std::uint64_t seed);

struct PatchPlacement {
    std::size_t glyph = 0;  // index into the manifest's glyph list
    std::size_t x = 0;
    std::size_t y = 0;
    bool distractor = false;
    bool faded = false;
};

struct ImageRecord {
    std::string id;
    std::string filename;  // relative to the dataset root
    int label = 0;
    std::vector<PatchPlacement> patches;
};

struct SyntheticDatasetManifest {
    DatasetConfig config;
    std::vector<Glyph> glyphs;
    std::vector<std::vector<std::size_t>> class_glyphs;
    std::vector<std::size_t> distractor_glyphs;
    std::vector<ImageRecord> images;

    nlohmann::json to_json() const;
    static SyntheticDatasetManifest from_json(const nlohmann::json& j);
};

/// Writes train/*.ppm, test/*.ppm, labels.csv and manifest.json under out_dir.
/// Output is a pure function of the config.
SyntheticDatasetManifest generate(const DatasetConfig& config, const std::filesystem::path& out_dir);

SyntheticDatasetManifest read_manifest(const std::filesystem::path& dir);

struct LabeledImage {
    std::string id;
    int label = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, as stored in the PPM

    /// [3,H,W] with values byte/255.
    template <typename T>
    Tensor<T> pixels() const;
    netpbm::Raster raster() const { return {width, height, 3, rgb}; }
};

/// Images of one split ("train" or "test") sorted by id.
std::vector<LabeledImage> load(const std::filesystem::path& dir, const std::string& split);

/// Stacks images into [B,3,H,W].
template <typename T>
Tensor<T> make_batch(std::span<const LabeledImage> images);

inline constexpr std::size_t kAugmentPad = 4;

struct AugmentChoice {
    bool flip = false;
    std::size_t offset_x = kAugmentPad;  // crop origin in the padded image
    std::size_t offset_y = kAugmentPad;
};

AugmentChoice draw_augment(std::mt19937_64& rng);

/// Optional horizontal flip, then edge-replicated padding by kAugmentPad and
/// a crop back to the original size at the chosen offset.
LabeledImage augment(const LabeledImage& image, const AugmentChoice& choice);
LabeledImage augment(const LabeledImage& image, std::mt19937_64& rng);

/// Copy of `image` in which every patch except the class glyph at
/// `keep_slot` is painted over with background noise.
LabeledImage mask_patches(const LabeledImage& image, const ImageRecord& record,
                          const SyntheticDatasetManifest& manifest, std::size_t keep_slot,
                          std::mt19937_64& rng);

}  // namespace ordistill
