#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>

#include "pvqae/types.hpp"

namespace pvqae {

/// Single-level orthonormal Haar subbands of a p x p patch (p even);
/// each subband is (p/2) x (p/2) and total energy equals the input's.
struct HaarSubbands {
    torch::Tensor ll, lh, hl, hh;

    torch::Tensor details() const;  // lh|hl|hh flattened into one vector
};

HaarSubbands dwt_haar(const torch::Tensor& patch);

/// Per-coarse-cell context richness. raw holds the log-normalized detail
/// entropy in [0,1]; normalized divides raw by its sum over cells (uniform
/// when every cell is flat) and itself sums to 1.
struct ContextRichness {
    torch::Tensor raw;
    torch::Tensor normalized;
};

/// image: (C x S x S) or (S x S); channels are averaged to grayscale before
/// the per-cell transform. S must divide evenly into coarse_grid cells.
ContextRichness context_entropy(const torch::Tensor& image, int64_t coarse_grid);

struct BudgetLossConfig {
    double cost_factor = 4.0;    // c > 1; level l (0-based) costs c^l
    double lambda_max = 1.25;
    double epsilon_floor = 1e-3;
    bool use_normalized = true;  // discount by normalized (vs raw) entropy
    bool cell_mean = true;       // scale summed cost by 1/cells^2 (see budget_loss)
};

/// Expected code cost, discounted by context richness. Per cell:
/// (1 / max(H, eps)) * sum_l soft[l] * c^l. cell_mean rescales the sum over
/// cells by 1/N^2 (N = cell count) so the magnitude stays comparable across
/// grid sizes; with a single cell both modes agree.
torch::Tensor budget_loss(const BudgetMap& budget, const ContextRichness& richness,
                          const BudgetLossConfig& cfg);

/// Budget-weight schedule; kind is one of constant, cosine, linear.
/// Endpoints are exact.
double lambda_schedule(int64_t step, int64_t total_steps, double lambda_max,
                       const std::string& kind);

}  // namespace pvqae
