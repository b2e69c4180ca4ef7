#pragma once

#include <torch/torch.h>

#include <vector>

namespace pvqae {

/// Per-level grids of patch embeddings, coarse to fine. levels[l] has shape
/// B x d x g_l x g_l with g_l = g_0 * 2^l; every coarse cell covers a 2^l
/// square block of level-l cells.
struct FeatureHierarchy {
    std::vector<torch::Tensor> levels;

    int64_t num_levels() const { return int64_t(levels.size()); }
    int64_t coarse_grid() const { return levels.empty() ? 0 : levels.front().size(2); }
    int64_t finest_grid() const { return levels.empty() ? 0 : levels.back().size(2); }
};

enum class RouteMode { train_soft, eval_hard };

/// Per-coarse-cell resolution scores. soft: B x g x g x L (rows sum to 1,
/// float64); hard: B x g x g int64 with hard == argmax(soft).
struct BudgetMap {
    torch::Tensor soft;
    torch::Tensor hard;
    RouteMode mode = RouteMode::eval_hard;
};

}  // namespace pvqae
