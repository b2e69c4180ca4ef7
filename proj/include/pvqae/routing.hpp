#pragma once

#include <torch/torch.h>

#include <optional>

#include "pvqae/types.hpp"

namespace pvqae {

/// Stable temperature softmax of (logits + noise) / tau along the last dim.
/// Computed in float64 with max subtraction, so adding a constant to every
/// logit leaves the scores bit-identical whenever the shifted logits are
/// exactly representable. Pass an undefined tensor for noiseless scores.
torch::Tensor gumbel_softmax(const torch::Tensor& logits, double tau, const torch::Tensor& noise);

/// Standard Gumbel(0,1) noise: -log(-log(u)), u ~ U(0,1).
torch::Tensor sample_gumbel(torch::IntArrayRef shape, torch::Generator& gen);

/// Exponential decay from tau_start at step 0 to tau_end at total_steps.
double temperature_schedule(int64_t step, int64_t total_steps, double tau_start, double tau_end);

/// Gate over pooled multi-resolution features: every level is average-pooled
/// to the coarsest grid, channels concatenated, and a single-hidden-layer MLP
/// emits one logit per resolution level for each coarse cell.
struct DynamicRouterImpl : torch::nn::Module {
    DynamicRouterImpl(int64_t levels, int64_t embed_dim);

    /// B x (L*d) x g x g pooled-and-concatenated features.
    torch::Tensor pooled_features(const FeatureHierarchy& hierarchy) const;

    /// B x g x g x L raw gate logits.
    torch::Tensor gate_logits(const FeatureHierarchy& hierarchy);

    /// train_soft draws fresh Gumbel noise (gen required); eval_hard is the
    /// noiseless softmax at the same tau. hard is the per-cell argmax of soft
    /// in both modes.
    BudgetMap route(const FeatureHierarchy& hierarchy, double tau,
                    std::optional<torch::Generator> gen, RouteMode mode);

    int64_t levels_;
    int64_t embed_dim_;
    torch::nn::Linear hidden{nullptr}, out{nullptr};
};
TORCH_MODULE(DynamicRouter);

}  // namespace pvqae
