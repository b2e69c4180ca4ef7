#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pvqae {

/// One image with its label and, for defect test samples, the ground-truth
/// mask. pixels: 3 x S x S float in [0,1]; mask: 1 x S x S float in {0,1},
/// defined iff the sample is a defect.
struct ImageSample {
    torch::Tensor pixels;
    bool defect = false;
    torch::Tensor mask;
    std::string category;
    std::string path;
};

struct DatasetManifest {
    std::vector<ImageSample> train;  // all normal
    std::vector<ImageSample> test;
    std::vector<std::string> categories;  // sorted
    int64_t image_size = 0;

    int64_t category_index(const std::string& name) const;
};

/// MVTec-style tree: <root>/<category>/train/good/*.png,
/// <root>/<category>/test/<type>/*.png and
/// <root>/<category>/ground_truth/<type>/*_mask.png for defect types.
DatasetManifest load_dataset(const std::string& root, int64_t image_size,
                             const std::optional<std::vector<std::string>>& categories = {});

struct SynthSpec {
    int64_t n_train = 200;
    int64_t n_test_normal = 40;
    int64_t n_test_defect = 40;
    int64_t image_size = 64;
    int64_t n_classes = 2;
    uint64_t seed = 17;
};

/// Deterministic textured dataset: each class pairs a structured texture
/// (random bars / random checker tiles) with a flat region, on a
/// class-specific layout. Defects are either a flat patch pasted over texture
/// or a scratch across the flat region, with exact masks.
DatasetManifest synth_texture_dataset(const SynthSpec& spec);

/// synth_texture_dataset plus the pre-injection originals of the defect test
/// samples, aligned with the defect entries of manifest.test in order.
struct SynthOutput {
    DatasetManifest manifest;
    std::vector<torch::Tensor> defect_clean;
};
SynthOutput synth_texture_dataset_full(const SynthSpec& spec);

/// True where the class layout places detailed texture (S x S bool).
torch::Tensor synth_region_mask(int64_t class_id, int64_t image_size);

struct AugmentationConfig {
    double hflip_prob = 0.5;
    double vflip_prob = 0.0;
    double jitter_strength = 0.1;  // brightness/contrast/saturation half-range
};

/// Train-time flips + color jitter; flips move pixels and mask identically,
/// jitter clamps back into [0,1]. All-identity parameters return the sample
/// unchanged.
ImageSample augment(const ImageSample& sample, const AugmentationConfig& cfg,
                    std::mt19937_64& rng);

// PNG helpers (8-bit; grayscale sources are promoted to 3 channels).
torch::Tensor read_image_rgb(const std::string& path, int64_t image_size);
torch::Tensor read_mask_png(const std::string& path, int64_t image_size);
void write_image_png(const std::string& path, const torch::Tensor& image);
void write_heatmap_png(const std::string& path, const torch::Tensor& map);

/// Write a manifest back out as an MVTec-style PNG tree.
void write_manifest_tree(const DatasetManifest& manifest, const std::string& root);

}  // namespace pvqae
