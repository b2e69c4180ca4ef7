#include "pvqae/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>

#include "pvqae/common.hpp"

namespace fs = std::filesystem;

namespace pvqae {

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& rgb) {
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat).clone();
    return t.permute({2, 0, 1}).contiguous();
}

cv::Mat tensor_to_mat(const torch::Tensor& image) {
    auto t = image.detach().to(torch::kFloat).clamp(0, 1);
    if (t.dim() == 2) t = t.unsqueeze(0);
    if (t.size(0) == 1) t = t.repeat({3, 1, 1});
    t = (t * 255.0).round().to(torch::kByte).permute({1, 2, 0}).contiguous();
    cv::Mat m(int(t.size(0)), int(t.size(1)), CV_8UC3);
    std::memcpy(m.data, t.data_ptr<uint8_t>(), size_t(t.numel()));
    return m;
}

std::vector<std::string> sorted_pngs(const fs::path& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png")
            files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

int64_t DatasetManifest::category_index(const std::string& name) const {
    auto it = std::find(categories.begin(), categories.end(), name);
    if (it == categories.end()) throw ConfigError("unknown category '" + name + "'");
    return it - categories.begin();
}

torch::Tensor read_image_rgb(const std::string& path, int64_t image_size) {
    cv::Mat raw = cv::imread(path, cv::IMREAD_COLOR);  // grayscale promoted, BGR
    if (raw.empty()) throw IoError("cannot read image: " + path);
    cv::Mat rgb;
    cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
    if (rgb.rows != image_size || rgb.cols != image_size)
        cv::resize(rgb, rgb, cv::Size(int(image_size), int(image_size)), 0, 0, cv::INTER_LINEAR);
    return mat_to_tensor(rgb);
}

torch::Tensor read_mask_png(const std::string& path, int64_t image_size) {
    cv::Mat raw = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (raw.empty()) throw IoError("cannot read mask: " + path);
    if (raw.rows != image_size || raw.cols != image_size)
        cv::resize(raw, raw, cv::Size(int(image_size), int(image_size)), 0, 0, cv::INTER_NEAREST);
    cv::Mat f;
    raw.convertTo(f, CV_32FC1, 1.0 / 255.0);
    auto t = torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat).clone();
    return (t > 0.5).to(torch::kFloat).unsqueeze(0);
}

void write_image_png(const std::string& path, const torch::Tensor& image) {
    cv::Mat rgb = tensor_to_mat(image);
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw IoError("cannot write PNG: " + path);
}

void write_heatmap_png(const std::string& path, const torch::Tensor& map) {
    TORCH_CHECK(map.dim() == 2, "heatmap must be H x W");
    auto m = map.detach().to(torch::kDouble);
    double lo = m.min().item<double>(), hi = m.max().item<double>();
    auto norm = hi > lo ? (m - lo) / (hi - lo) : torch::zeros_like(m);
    write_image_png(path, norm.to(torch::kFloat).unsqueeze(0));
}

DatasetManifest load_dataset(const std::string& root, int64_t image_size,
                             const std::optional<std::vector<std::string>>& categories) {
    if (!fs::is_directory(root)) throw ConfigError("dataset root is not a directory: " + root);

    std::vector<std::string> cats;
    if (categories.has_value()) {
        cats = *categories;
        for (const auto& c : cats)
            if (!fs::is_directory(fs::path(root) / c))
                throw ConfigError("missing category directory: " + c);
    } else {
        for (const auto& e : fs::directory_iterator(root))
            if (e.is_directory()) cats.push_back(e.path().filename().string());
    }
    std::sort(cats.begin(), cats.end());
    if (cats.empty()) throw ConfigError("no categories found under " + root);

    DatasetManifest out;
    out.categories = cats;
    out.image_size = image_size;

    for (const auto& cat : cats) {
        fs::path cat_dir = fs::path(root) / cat;
        fs::path train_dir = cat_dir / "train" / "good";
        if (!fs::is_directory(train_dir))
            throw ConfigError("missing train/good directory for category " + cat);
        for (const auto& file : sorted_pngs(train_dir)) {
            ImageSample s;
            s.pixels = read_image_rgb(file, image_size);
            s.category = cat;
            s.path = file;
            out.train.push_back(std::move(s));
        }

        fs::path test_dir = cat_dir / "test";
        if (!fs::is_directory(test_dir))
            throw ConfigError("missing test directory for category " + cat);
        std::vector<std::string> types;
        for (const auto& e : fs::directory_iterator(test_dir))
            if (e.is_directory()) types.push_back(e.path().filename().string());
        std::sort(types.begin(), types.end());
        for (const auto& type : types) {
            for (const auto& file : sorted_pngs(test_dir / type)) {
                ImageSample s;
                s.pixels = read_image_rgb(file, image_size);
                s.category = cat;
                s.path = file;
                s.defect = type != "good";
                if (s.defect) {
                    fs::path stem = fs::path(file).stem();
                    fs::path mask_path =
                        cat_dir / "ground_truth" / type / (stem.string() + "_mask.png");
                    if (!fs::is_regular_file(mask_path))
                        throw IntegrityError("defect test image without mask: " + file);
                    s.mask = read_mask_png(mask_path.string(), image_size);
                }
                out.test.push_back(std::move(s));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic textures
// ---------------------------------------------------------------------------

namespace {

double draw_uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Class layouts cycle through detailed-left / top / right / bottom halves.
torch::Tensor layout_mask(int64_t class_id, int64_t s) {
    auto mask = torch::zeros({s, s}, torch::kBool);
    using namespace torch::indexing;
    switch (class_id % 4) {
        case 0: mask.index_put_({Slice(), Slice(0, s / 2)}, true); break;
        case 1: mask.index_put_({Slice(0, s / 2), Slice()}, true); break;
        case 2: mask.index_put_({Slice(), Slice(s / 2, None)}, true); break;
        default: mask.index_put_({Slice(s / 2, None), Slice()}, true); break;
    }
    return mask;
}

// Structured random texture: binary tiles (bars for even classes, square
// checker tiles for odd ones) mixing two drawn colors. Tile size 2 px keeps
// detail energy in the finest wavelet band.
torch::Tensor texture_image(std::mt19937_64& rng, int64_t class_id, int64_t s) {
    int64_t tile_w = 2, tile_h = class_id % 2 == 0 ? 4 : 2;
    auto col_a = torch::tensor({draw_uniform(rng, 0.2, 0.45), draw_uniform(rng, 0.2, 0.45),
                                draw_uniform(rng, 0.2, 0.45)});
    auto col_b = torch::tensor({draw_uniform(rng, 0.55, 0.8), draw_uniform(rng, 0.55, 0.8),
                                draw_uniform(rng, 0.55, 0.8)});
    auto smooth = torch::tensor({draw_uniform(rng, 0.15, 0.85), draw_uniform(rng, 0.15, 0.85),
                                 draw_uniform(rng, 0.15, 0.85)});

    int64_t gh = s / tile_h, gw = s / tile_w;
    auto bits = torch::empty({gh, gw}, torch::kBool);
    auto acc = bits.accessor<bool, 2>();
    std::bernoulli_distribution coin(0.5);
    for (int64_t r = 0; r < gh; ++r)
        for (int64_t c = 0; c < gw; ++c) acc[r][c] = coin(rng);
    auto pattern =
        bits.repeat_interleave(tile_h, 0).repeat_interleave(tile_w, 1);  // s x s bool

    auto textured = torch::where(pattern.unsqueeze(0), col_b.reshape({3, 1, 1}),
                                 col_a.reshape({3, 1, 1}));
    auto flat = smooth.reshape({3, 1, 1}).expand({3, s, s});
    auto region = layout_mask(class_id, s).unsqueeze(0);
    return torch::where(region, textured, flat).contiguous();
}

struct Defect {
    torch::Tensor pixels;  // image with the defect injected
    torch::Tensor mask;    // 1 x s x s footprint
};

// Rectangle center constrained inside (or outside) the detailed region.
std::pair<int64_t, int64_t> place_center(std::mt19937_64& rng, const torch::Tensor& region,
                                         bool in_detailed, int64_t s, int64_t margin) {
    auto acc = region.accessor<bool, 2>();
    for (int attempt = 0; attempt < 256; ++attempt) {
        int64_t r = int64_t(draw_uniform(rng, double(margin), double(s - margin)));
        int64_t c = int64_t(draw_uniform(rng, double(margin), double(s - margin)));
        if (acc[r][c] == in_detailed) return {r, c};
    }
    return {s / 2, s / 2};
}

Defect inject_defect(std::mt19937_64& rng, const torch::Tensor& clean, int64_t class_id,
                     int64_t defect_idx, int64_t s) {
    auto region = layout_mask(class_id, s);
    auto pixels = clean.clone();
    auto mask = torch::zeros({1, s, s}, torch::kFloat);
    using namespace torch::indexing;

    if (defect_idx % 2 == 0) {
        // Flat square patch over the detailed texture; color outside the
        // [0.15, 0.85] content range so every covered pixel changes.
        int64_t side = 8 + int64_t(draw_uniform(rng, 0.0, 7.0));
        auto [r, c] = place_center(rng, region, /*in_detailed=*/true, s, side / 2 + 1);
        int64_t r0 = std::clamp<int64_t>(r - side / 2, 0, s - side);
        int64_t c0 = std::clamp<int64_t>(c - side / 2, 0, s - side);
        auto color = torch::tensor({draw_uniform(rng, 0.0, 1.0) < 0.5 ? 0.02 : 0.98,
                                    draw_uniform(rng, 0.0, 1.0) < 0.5 ? 0.02 : 0.98,
                                    draw_uniform(rng, 0.0, 1.0) < 0.5 ? 0.02 : 0.98});
        pixels.index_put_({Slice(), Slice(r0, r0 + side), Slice(c0, c0 + side)},
                          color.reshape({3, 1, 1}).expand({3, side, side}));
        mask.index_put_({0, Slice(r0, r0 + side), Slice(c0, c0 + side)}, 1.0f);
    } else {
        // Scratch across the flat region: +-0.4 shift keeps |delta| >= 0.4.
        int64_t len = 16 + int64_t(draw_uniform(rng, 0.0, 13.0));
        int64_t width = 2;
        int orient = int(draw_uniform(rng, 0.0, 3.0));  // 0 horiz, 1 vert, 2 diag
        auto [r, c] = place_center(rng, region, /*in_detailed=*/false, s, len / 2 + 2);
        auto scratch = torch::zeros({s, s}, torch::kBool);
        auto acc = scratch.accessor<bool, 2>();
        for (int64_t i = -len / 2; i < len / 2; ++i) {
            for (int64_t w = 0; w < width; ++w) {
                int64_t rr = orient == 0 ? r + w : (orient == 1 ? r + i : r + i);
                int64_t cc = orient == 0 ? c + i : (orient == 1 ? c + w : c + i + w);
                if (rr >= 0 && rr < s && cc >= 0 && cc < s) acc[rr][cc] = true;
            }
        }
        auto shift = torch::where(pixels < 0.5, torch::full_like(pixels, 0.4),
                                  torch::full_like(pixels, -0.4));
        pixels = torch::where(scratch.unsqueeze(0), pixels + shift, pixels);
        mask = scratch.to(torch::kFloat).unsqueeze(0);
    }
    return {pixels.clamp(0, 1), mask};
}

}  // namespace

torch::Tensor synth_region_mask(int64_t class_id, int64_t image_size) {
    return layout_mask(class_id, image_size);
}

SynthOutput synth_texture_dataset_full(const SynthSpec& spec) {
    if (spec.n_train < 1 || spec.n_test_normal < 1 || spec.n_test_defect < 1 ||
        spec.n_classes < 1)
        throw ConfigError("synth_texture_dataset: all counts must be >= 1");
    if (spec.image_size < 16 || spec.image_size % 16 != 0)
        throw ConfigError("synth_texture_dataset: image_size must be a positive multiple of 16");

    std::mt19937_64 rng(spec.seed);
    SynthOutput out;
    out.manifest.image_size = spec.image_size;
    for (int64_t k = 0; k < spec.n_classes; ++k)
        out.manifest.categories.push_back("class_" + std::to_string(k));

    auto make_sample = [&](int64_t class_id, const std::string& split, int64_t idx) {
        ImageSample s;
        s.pixels = texture_image(rng, class_id, spec.image_size);
        s.category = out.manifest.categories[size_t(class_id)];
        s.path = "synth://" + s.category + "/" + split + "/" + std::to_string(idx);
        return s;
    };

    for (int64_t i = 0; i < spec.n_train; ++i)
        out.manifest.train.push_back(make_sample(i % spec.n_classes, "train", i));
    for (int64_t i = 0; i < spec.n_test_normal; ++i)
        out.manifest.test.push_back(make_sample(i % spec.n_classes, "test_good", i));
    for (int64_t i = 0; i < spec.n_test_defect; ++i) {
        int64_t class_id = i % spec.n_classes;
        auto s = make_sample(class_id, "test_defect", i);
        auto clean = s.pixels;
        auto defect = inject_defect(rng, clean, class_id, i / spec.n_classes, spec.image_size);
        s.pixels = defect.pixels;
        s.mask = defect.mask;
        s.defect = true;
        out.manifest.test.push_back(std::move(s));
        out.defect_clean.push_back(clean);
    }
    return out;
}

DatasetManifest synth_texture_dataset(const SynthSpec& spec) {
    return synth_texture_dataset_full(spec).manifest;
}

ImageSample augment(const ImageSample& sample, const AugmentationConfig& cfg,
                    std::mt19937_64& rng) {
    if (sample.defect) throw ConfigError("augment: training augmentation expects normal samples");
    for (auto [p, name] : {std::pair{cfg.hflip_prob, "hflip_prob"}, {cfg.vflip_prob, "vflip_prob"}})
        if (p < 0 || p > 1) throw ConfigError(std::string("augment: ") + name + " must be in [0,1]");
    if (cfg.jitter_strength < 0) throw ConfigError("augment: jitter_strength must be >= 0");

    ImageSample out = sample;
    auto px = sample.pixels;
    bool copied = false;

    auto flip = [&](int64_t dim) {
        px = px.flip(dim);
        if (out.mask.defined()) out.mask = out.mask.flip(dim);
        copied = true;
    };
    if (cfg.hflip_prob > 0 && draw_uniform(rng, 0, 1) < cfg.hflip_prob) flip(2);
    if (cfg.vflip_prob > 0 && draw_uniform(rng, 0, 1) < cfg.vflip_prob) flip(1);

    if (cfg.jitter_strength > 0) {
        double s = cfg.jitter_strength;
        double fb = draw_uniform(rng, std::max(0.0, 1 - s), 1 + s);
        double fc = draw_uniform(rng, std::max(0.0, 1 - s), 1 + s);
        double fs = draw_uniform(rng, std::max(0.0, 1 - s), 1 + s);
        px = px * fb;
        auto mean = px.mean();
        px = (px - mean) * fc + mean;
        auto gray = px.mean(0, /*keepdim=*/true);
        px = gray + (px - gray) * fs;
        px = px.clamp(0, 1);
        copied = true;
    }

    out.pixels = copied ? px : px.clone();
    return out;
}

void write_manifest_tree(const DatasetManifest& manifest, const std::string& root) {
    fs::create_directories(root);
    std::map<std::string, int64_t> train_idx, good_idx, defect_idx;
    char name[32];

    for (const auto& cat : manifest.categories) {
        fs::create_directories(fs::path(root) / cat / "train" / "good");
        fs::create_directories(fs::path(root) / cat / "test" / "good");
        fs::create_directories(fs::path(root) / cat / "test" / "defect");
        fs::create_directories(fs::path(root) / cat / "ground_truth" / "defect");
    }
    for (const auto& s : manifest.train) {
        std::snprintf(name, sizeof(name), "%04ld.png", long(train_idx[s.category]++));
        write_image_png((fs::path(root) / s.category / "train" / "good" / name).string(), s.pixels);
    }
    for (const auto& s : manifest.test) {
        if (s.defect) {
            std::snprintf(name, sizeof(name), "%04ld", long(defect_idx[s.category]++));
            auto base = fs::path(root) / s.category;
            write_image_png((base / "test" / "defect" / (std::string(name) + ".png")).string(),
                            s.pixels);
            write_image_png(
                (base / "ground_truth" / "defect" / (std::string(name) + "_mask.png")).string(),
                s.mask);
        } else {
            std::snprintf(name, sizeof(name), "%04ld.png", long(good_idx[s.category]++));
            write_image_png((fs::path(root) / s.category / "test" / "good" / name).string(),
                            s.pixels);
        }
    }
}

}  // namespace pvqae
