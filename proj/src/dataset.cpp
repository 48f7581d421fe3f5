#include "ordistill/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ordistill/error.hpp"

namespace ordistill {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kLabelsFile = "labels.csv";
constexpr std::size_t kPlacementGap = 1;
constexpr std::size_t kMaxGlyphAttempts = 200000;

void check_unit(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
        fail(ErrorKind::Config, std::string(name) + " must lie in [0,1], got " + std::to_string(v));
    }
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string image_id(const std::string& split, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06zu", split.c_str(), index);
    return buf;
}

struct Renderer {
    const DatasetConfig& config;
    std::mt19937_64& rng;

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

    void paint_background(std::vector<double>& canvas, double base) {
        for (double& v : canvas) v = base + uniform(-config.background_noise, config.background_noise);
    }

    void paint_glyph(std::vector<double>& canvas, const Glyph& glyph, std::size_t x, std::size_t y,
                     double base, double contrast, double flip_prob) {
        const std::size_t size = config.image_size;
        std::bernoulli_distribution flip(flip_prob);
        for (std::size_t gy = 0; gy < glyph.size; ++gy) {
            for (std::size_t gx = 0; gx < glyph.size; ++gx) {
                bool on = glyph.bits[gy * glyph.size + gx] != 0;
                if (flip(rng)) on = !on;
                const double level = on ? base + contrast : base;
                for (std::size_t c = 0; c < 3; ++c) {
                    canvas[((y + gy) * size + (x + gx)) * 3 + c] =
                        level + uniform(-config.background_noise, config.background_noise) * 0.5;
                }
            }
        }
    }

    // Non-overlapping top-left corners, kPlacementGap pixels apart.
    std::vector<std::pair<std::size_t, std::size_t>> place(std::size_t count) {
        const std::size_t span = config.image_size - config.patch_size + 1;
        const std::size_t footprint = config.patch_size + kPlacementGap;
        std::uniform_int_distribution<std::size_t> coord(0, span - 1);
        for (;;) {
            std::vector<std::pair<std::size_t, std::size_t>> spots;
            for (std::size_t attempt = 0; attempt < 1000 && spots.size() < count; ++attempt) {
                const std::size_t x = coord(rng), y = coord(rng);
                const bool clear = std::none_of(spots.begin(), spots.end(), [&](const auto& s) {
                    const std::size_t dx = x > s.first ? x - s.first : s.first - x;
                    const std::size_t dy = y > s.second ? y - s.second : s.second - y;
                    return dx < footprint && dy < footprint;
                });
                if (clear) spots.emplace_back(x, y);
            }
            if (spots.size() == count) return spots;
        }
    }
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

void DatasetConfig::validate() const {
    if (num_classes < 2) fail(ErrorKind::Config, "num_classes must be at least 2");
    if (patches_per_class == 0) fail(ErrorKind::Config, "patches_per_class must be positive");
    if (patch_size < 4 || patch_size > 8) fail(ErrorKind::Config, "patch_size must be between 4 and 8");
    if (train_per_class == 0 || test_per_class == 0) {
        fail(ErrorKind::Config, "train_per_class and test_per_class must be positive");
    }
    if (num_classes * patches_per_class + distractors > kGlyphAlphabetSize) {
        fail(ErrorKind::Config, "num_classes * patches_per_class + distractors = " +
                                    std::to_string(num_classes * patches_per_class + distractors) +
                                    " exceeds the glyph alphabet of " + std::to_string(kGlyphAlphabetSize));
    }
    const std::size_t patches = patches_per_class + distractors;
    const std::size_t cell = patch_size + kPlacementGap;
    const std::size_t per_row = (image_size + kPlacementGap) / cell;
    if (image_size < patch_size || per_row * per_row < patches * 2) {
        fail(ErrorKind::Config, "image_size " + std::to_string(image_size) + " too small for " +
                                    std::to_string(patches) + " patches of size " + std::to_string(patch_size));
    }
    check_unit(background_noise, "background_noise");
    check_unit(salient_contrast, "salient_contrast");
    check_unit(subtle_contrast, "subtle_contrast");
    check_unit(flip_prob, "flip_prob");
    check_unit(fade_prob, "fade_prob");
    check_unit(fade_contrast, "fade_contrast");
}

nlohmann::json DatasetConfig::to_json() const {
    return {{"num_classes", num_classes},
            {"patches_per_class", patches_per_class},
            {"patch_size", patch_size},
            {"image_size", image_size},
            {"train_per_class", train_per_class},
            {"test_per_class", test_per_class},
            {"distractors", distractors},
            {"seed", seed},
            {"background_noise", background_noise},
            {"salient_contrast", salient_contrast},
            {"subtle_contrast", subtle_contrast},
            {"flip_prob", flip_prob},
            {"fade_prob", fade_prob},
            {"fade_contrast", fade_contrast}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.patches_per_class = j.at("patches_per_class").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.train_per_class = j.at("train_per_class").get<std::size_t>();
    c.test_per_class = j.at("test_per_class").get<std::size_t>();
    c.distractors = j.at("distractors").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.background_noise = j.at("background_noise").get<double>();
    c.salient_contrast = j.at("salient_contrast").get<double>();
    c.subtle_contrast = j.at("subtle_contrast").get<double>();
    c.flip_prob = j.at("flip_prob").get<double>();
    c.fade_prob = j.at("fade_prob").get<double>();
    c.fade_contrast = j.at("fade_contrast").get<double>();
    return c;
}

std::size_t Glyph::hamming(const Glyph& other) const {
    std::size_t d = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) d += bits[i] != other.bits[i];
    return d;
}

std::string Glyph::hex() const {
    std::string out;
    static constexpr char kDigits[] = "0123456789abcdef";
    for (std::size_t i = 0; i < bits.size(); i += 4) {
        unsigned nibble = 0;
        for (std::size_t b = 0; b < 4; ++b) {
            nibble = (nibble << 1) | (i + b < bits.size() ? bits[i + b] : 0u);
        }
        out += kDigits[nibble];
    }
    return out;
}

Glyph Glyph::from_hex(std::size_t size, const std::string& hex) {
    Glyph g{size, std::vector<std::uint8_t>(size * size)};
    if (hex.size() != (g.bits.size() + 3) / 4) fail(ErrorKind::Format, "glyph hex has wrong length: " + hex);
    for (std::size_t i = 0; i < hex.size(); ++i) {
        const char c = hex[i];
        unsigned nibble;
        if (c >= '0' && c <= '9') nibble = static_cast<unsigned>(c - '0');
        else if (c >= 'a' && c <= 'f') nibble = static_cast<unsigned>(c - 'a' + 10);
        else fail(ErrorKind::Format, "glyph hex has invalid digit: " + hex);
        for (std::size_t b = 0; b < 4; ++b) {
            const std::size_t idx = i * 4 + b;
            if (idx < g.bits.size()) g.bits[idx] = static_cast<std::uint8_t>((nibble >> (3 - b)) & 1u);
        }
    }
    return g;
}

std::vector<Glyph> make_glyph_alphabet(std::size_t count, std::size_t size, std::uint64_t seed) {
    if (count > kGlyphAlphabetSize) {
        fail(ErrorKind::Config, "requested " + std::to_string(count) + " glyphs, alphabet holds " +
                                    std::to_string(kGlyphAlphabetSize));
    }
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    const std::size_t cells = size * size;
    std::vector<Glyph> glyphs;
    for (std::size_t attempt = 0; glyphs.size() < count; ++attempt) {
        if (attempt >= kMaxGlyphAttempts) {
            fail(ErrorKind::Config, "could not sample " + std::to_string(count) + " glyphs of size " +
                                        std::to_string(size) + " at distance " +
                                        std::to_string(kMinGlyphDistance));
        }
        Glyph g{size, std::vector<std::uint8_t>(cells)};
        std::size_t ink = 0;
        for (auto& b : g.bits) ink += (b = coin(rng) ? 1 : 0);
        if (ink * 3 < cells || ink * 3 > cells * 2) continue;
        // A glyph and its mirror image must both stay distinct from all others.
        Glyph mirror = g;
        for (std::size_t r = 0; r < size; ++r) {
            std::reverse(mirror.bits.begin() + static_cast<std::ptrdiff_t>(r * size),
                         mirror.bits.begin() + static_cast<std::ptrdiff_t>((r + 1) * size));
        }
        const bool distinct = std::all_of(glyphs.begin(), glyphs.end(), [&](const Glyph& other) {
            return g.hamming(other) >= kMinGlyphDistance && mirror.hamming(other) >= kMinGlyphDistance;
        });
        if (distinct) glyphs.push_back(std::move(g));
    }
    return glyphs;
}

nlohmann::json SyntheticDatasetManifest::to_json() const {
    nlohmann::json j = config.to_json();
    nlohmann::json glyph_hex = nlohmann::json::array();
    for (const auto& g : glyphs) glyph_hex.push_back(g.hex());
    j["glyphs"] = glyph_hex;
    j["class_glyphs"] = class_glyphs;
    j["distractor_glyphs"] = distractor_glyphs;
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : images) {
        nlohmann::json patches = nlohmann::json::array();
        for (const auto& p : rec.patches) {
            patches.push_back({{"glyph", p.glyph},
                               {"x", p.x},
                               {"y", p.y},
                               {"distractor", p.distractor},
                               {"faded", p.faded}});
        }
        records.push_back({{"id", rec.id}, {"filename", rec.filename}, {"label", rec.label}, {"patches", patches}});
    }
    j["images"] = records;
    return j;
}

SyntheticDatasetManifest SyntheticDatasetManifest::from_json(const nlohmann::json& j) {
    SyntheticDatasetManifest m;
    m.config = DatasetConfig::from_json(j);
    for (const auto& h : j.at("glyphs")) m.glyphs.push_back(Glyph::from_hex(m.config.patch_size, h.get<std::string>()));
    m.class_glyphs = j.at("class_glyphs").get<std::vector<std::vector<std::size_t>>>();
    m.distractor_glyphs = j.at("distractor_glyphs").get<std::vector<std::size_t>>();
    for (const auto& r : j.at("images")) {
        ImageRecord rec;
        rec.id = r.at("id").get<std::string>();
        rec.filename = r.at("filename").get<std::string>();
        rec.label = r.at("label").get<int>();
        for (const auto& p : r.at("patches")) {
            rec.patches.push_back({p.at("glyph").get<std::size_t>(), p.at("x").get<std::size_t>(),
                                   p.at("y").get<std::size_t>(), p.at("distractor").get<bool>(),
                                   p.at("faded").get<bool>()});
        }
        m.images.push_back(std::move(rec));
    }
    return m;
}

SyntheticDatasetManifest generate(const DatasetConfig& config, const fs::path& out_dir) {
    config.validate();
    const std::size_t class_glyph_count = config.num_classes * config.patches_per_class;

    SyntheticDatasetManifest manifest;
    manifest.config = config;
    manifest.glyphs = make_glyph_alphabet(class_glyph_count + config.distractors, config.patch_size, config.seed);
    manifest.class_glyphs.resize(config.num_classes);
    for (std::size_t c = 0; c < config.num_classes; ++c) {
        for (std::size_t p = 0; p < config.patches_per_class; ++p) {
            manifest.class_glyphs[c].push_back(c * config.patches_per_class + p);
        }
    }
    for (std::size_t d = 0; d < config.distractors; ++d) manifest.distractor_glyphs.push_back(class_glyph_count + d);

    std::error_code ec;
    for (const char* split : {"train", "test"}) {
        fs::create_directories(out_dir / split, ec);
        if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / split).string() + ": " + ec.message());
    }

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    Renderer render{config, rng};
    std::bernoulli_distribution fade(config.fade_prob);
    std::string labels_csv = "id,filename,label\n";
    const std::size_t size = config.image_size;
    for (const std::string split : {"train", "test"}) {
        const std::size_t per_class = split == "train" ? config.train_per_class : config.test_per_class;
        std::size_t index = 0;
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t c = 0; c < config.num_classes; ++c, ++index) {
                ImageRecord rec;
                rec.id = image_id(split, index);
                rec.filename = split + "/" + rec.id + ".ppm";
                rec.label = static_cast<int>(c);

                std::vector<double> canvas(size * size * 3);
                const double base = render.uniform(0.05, 0.15);
                render.paint_background(canvas, base);
                const auto spots = render.place(config.patches_per_class + config.distractors);
                for (std::size_t s = 0; s < spots.size(); ++s) {
                    PatchPlacement p;
                    p.x = spots[s].first;
                    p.y = spots[s].second;
                    double contrast = config.salient_contrast;
                    if (s < config.patches_per_class) {
                        p.glyph = manifest.class_glyphs[c][s];
                        if (s > 0) {
                            contrast = config.subtle_contrast;
                        } else if (fade(rng)) {
                            p.faded = true;
                            contrast = config.fade_contrast;
                        }
                    } else {
                        p.glyph = manifest.distractor_glyphs[s - config.patches_per_class];
                        p.distractor = true;
                    }
                    render.paint_glyph(canvas, manifest.glyphs[p.glyph], p.x, p.y, base, contrast,
                                       config.flip_prob);
                    rec.patches.push_back(p);
                }

                netpbm::Raster raster{size, size, 3, std::vector<std::uint8_t>(canvas.size())};
                std::transform(canvas.begin(), canvas.end(), raster.pixels.begin(), to_byte);
                netpbm::write_file(out_dir / rec.filename, raster);
                labels_csv += rec.id + "," + rec.filename + "," + std::to_string(rec.label) + "\n";
                manifest.images.push_back(std::move(rec));
            }
        }
    }
    netpbm::write_bytes(out_dir / kLabelsFile, labels_csv);
    netpbm::write_bytes(out_dir / kManifestFile, manifest.to_json().dump(1) + "\n");
    return manifest;
}

SyntheticDatasetManifest read_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifestFile;
    const std::string text = netpbm::read_bytes(path);
    try {
        return SyntheticDatasetManifest::from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, path.string() + ": " + e.what());
    }
}

template <typename T>
Tensor<T> LabeledImage::pixels() const {
    Tensor<T> out(Shape{3, height, width});
    auto dst = out.mutable_values();
    const std::size_t plane = height * width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) dst[c * plane + i] = static_cast<T>(rgb[i * 3 + c]) / T(255);
    }
    return out;
}

std::vector<LabeledImage> load(const fs::path& dir, const std::string& split) {
    if (split != "train" && split != "test") fail(ErrorKind::Config, "unknown split '" + split + "'");
    if (!fs::is_directory(dir)) fail(ErrorKind::Io, "dataset directory " + dir.string() + " not found");
    const SyntheticDatasetManifest manifest = read_manifest(dir);
    const fs::path labels_path = dir / kLabelsFile;
    std::istringstream csv(netpbm::read_bytes(labels_path));
    std::string line;
    if (!std::getline(csv, line) || line != "id,filename,label") {
        fail(ErrorKind::Format, labels_path.string() + ": missing header 'id,filename,label'");
    }
    const int num_classes = static_cast<int>(manifest.config.num_classes);
    const std::string prefix = split + "/";
    std::vector<LabeledImage> images;
    std::size_t line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        const std::string where = labels_path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 3) fail(ErrorKind::Format, where + ": expected 3 fields");
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            fail(ErrorKind::Format, where + ": invalid label '" + fields[2] + "'");
        }
        if (label < 0 || label >= num_classes) {
            fail(ErrorKind::Format, where + ": label " + std::to_string(label) + " outside [0," +
                                        std::to_string(num_classes) + ")");
        }
        if (!fields[1].starts_with(prefix)) continue;
        const netpbm::Raster raster = netpbm::read_file(dir / fields[1]);
        if (raster.channels != 3 || raster.width != manifest.config.image_size ||
            raster.height != manifest.config.image_size) {
            fail(ErrorKind::Format, (dir / fields[1]).string() + ": unexpected image dimensions");
        }
        images.push_back({fields[0], label, raster.height, raster.width, raster.pixels});
    }
    std::sort(images.begin(), images.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    const std::size_t expected = manifest.config.num_classes *
                                 (split == "train" ? manifest.config.train_per_class : manifest.config.test_per_class);
    if (images.size() != expected) {
        fail(ErrorKind::Format, labels_path.string() + ": " + std::to_string(images.size()) + " " + split +
                                    " rows, manifest expects " + std::to_string(expected));
    }
    return images;
}

template <typename T>
Tensor<T> make_batch(std::span<const LabeledImage> images) {
    if (images.empty()) fail(ErrorKind::Shape, "make_batch: empty batch");
    const std::size_t h = images[0].height, w = images[0].width, per = 3 * h * w;
    Tensor<T> out(Shape{images.size(), 3, h, w});
    auto dst = out.mutable_values();
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (images[b].height != h || images[b].width != w) {
            fail(ErrorKind::Shape, "make_batch: image " + images[b].id + " has different dimensions");
        }
        const Tensor<T> px = images[b].pixels<T>();
        std::copy(px.values().begin(), px.values().end(), dst.begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    return out;
}

AugmentChoice draw_augment(std::mt19937_64& rng) {
    std::bernoulli_distribution flip(0.5);
    std::uniform_int_distribution<std::size_t> offset(0, 2 * kAugmentPad);
    AugmentChoice choice;
    choice.flip = flip(rng);
    choice.offset_x = offset(rng);
    choice.offset_y = offset(rng);
    return choice;
}

LabeledImage augment(const LabeledImage& image, const AugmentChoice& choice) {
    if (choice.offset_x > 2 * kAugmentPad || choice.offset_y > 2 * kAugmentPad) {
        fail(ErrorKind::Contract, "augment: crop offset outside the padded image");
    }
    const std::size_t h = image.height, w = image.width;
    LabeledImage out = image;
    for (std::size_t y = 0; y < h; ++y) {
        // Padded coordinate -> source coordinate with edge replication.
        const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(y + choice.offset_y) - static_cast<std::ptrdiff_t>(kAugmentPad);
        const std::size_t sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(py, 0, static_cast<std::ptrdiff_t>(h) - 1));
        for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(x + choice.offset_x) - static_cast<std::ptrdiff_t>(kAugmentPad);
            std::size_t sx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(px, 0, static_cast<std::ptrdiff_t>(w) - 1));
            if (choice.flip) sx = w - 1 - sx;
            for (std::size_t c = 0; c < 3; ++c) out.rgb[(y * w + x) * 3 + c] = image.rgb[(sy * w + sx) * 3 + c];
        }
    }
    return out;
}

LabeledImage augment(const LabeledImage& image, std::mt19937_64& rng) {
    return augment(image, draw_augment(rng));
}

LabeledImage mask_patches(const LabeledImage& image, const ImageRecord& record,
                          const SyntheticDatasetManifest& manifest, std::size_t keep_slot,
                          std::mt19937_64& rng) {
    const std::size_t w = image.width, size = manifest.config.patch_size;
    std::vector<std::uint8_t> covered(image.height * w, 0);
    for (const auto& p : record.patches) {
        for (std::size_t y = p.y; y < p.y + size; ++y) {
            for (std::size_t x = p.x; x < p.x + size; ++x) covered[y * w + x] = 1;
        }
    }
    double background = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < covered.size(); ++i) {
        if (covered[i]) continue;
        for (std::size_t c = 0; c < 3; ++c) background += image.rgb[i * 3 + c];
        count += 3;
    }
    background = count ? background / (255.0 * static_cast<double>(count)) : 0.45;
    const double noise = manifest.config.background_noise;
    std::uniform_real_distribution<double> jitter(-noise, noise);

    LabeledImage out = image;
    for (std::size_t slot = 0; slot < record.patches.size(); ++slot) {
        const auto& p = record.patches[slot];
        if (p.distractor || slot == keep_slot) continue;
        for (std::size_t y = p.y; y < p.y + size; ++y) {
            for (std::size_t x = p.x; x < p.x + size; ++x) {
                for (std::size_t c = 0; c < 3; ++c) out.rgb[(y * w + x) * 3 + c] = to_byte(background + jitter(rng));
            }
        }
    }
    return out;
}

template Tensor<float> LabeledImage::pixels<float>() const;
template Tensor<double> LabeledImage::pixels<double>() const;
template Tensor<float> make_batch<float>(std::span<const LabeledImage>);
template Tensor<double> make_batch<double>(std::span<const LabeledImage>);

}  // namespace ordistill
