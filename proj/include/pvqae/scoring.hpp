#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "pvqae/types.hpp"

namespace pvqae {

/// Per-pixel defect scores and their components. s_prior_cells is undefined
/// when scoring runs without a budget prior.
struct ScoreMap {
    torch::Tensor s;              // H x W, smoothed product
    torch::Tensor s_prior_cells;  // g x g, sums to 1
    torch::Tensor s_recon;        // H x W channel-summed squared error
    double image_score = 0.0;     // max over the smoothed map
};

/// Cross entropy between the routed soft scores and the prior's predicted
/// distributions, normalized into a distribution over cells.
/// budget_soft: g x g x L, prior_dists: g x g x L.
torch::Tensor s_prior(const torch::Tensor& budget_soft, const torch::Tensor& prior_dists);

/// Channel-summed squared reconstruction error, H x W.
torch::Tensor s_recon(const torch::Tensor& x, const torch::Tensor& x_hat);

/// Separable Gaussian blur with reflect padding; sigma == 0 returns the input.
torch::Tensor gaussian_smooth(const torch::Tensor& map, double sigma);

/// Nearest-neighbor upsample of the prior cells times the reconstruction
/// error, then Gaussian smoothing; image score is the max of the result.
ScoreMap defect_score(const torch::Tensor& s_prior_cells, const torch::Tensor& s_recon_map,
                      double smoothing_sigma);

/// Reconstruction-only variant (no budget prior).
ScoreMap recon_only_score(const torch::Tensor& s_recon_map, double smoothing_sigma);

/// Strict greater-than indicator per pixel.
torch::Tensor threshold(const torch::Tensor& score_map, double t);

/// Mann-Whitney AUROC with ties counted 1/2. Throws MetricError unless both
/// classes are present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct CategoryMetrics {
    std::string category;
    double image_auroc = 0.0;
    double pixel_auroc = 0.0;
    int64_t n_images = 0;
    int64_t n_pixels = 0;
};

struct MetricsReport {
    std::vector<CategoryMetrics> per_category;
    CategoryMetrics overall;
    double mean_budget_cost = 0.0;             // mean hard-level cost per cell
    std::vector<double> code_utilization;      // fraction of each level's codes used
};

/// CSV rows: category,image_auroc,pixel_auroc,n_images,n_pixels; one row per
/// category plus an "overall" row. Formatting is fixed-precision so repeated
/// evaluations are byte-identical.
std::string metrics_csv(const MetricsReport& report);
void write_metrics_csv(const std::string& path, const MetricsReport& report);

/// Small integer matrix dump of a hard-level grid, one row per grid row.
void write_level_grid_csv(const std::string& path, const torch::Tensor& hard);

}  // namespace pvqae
