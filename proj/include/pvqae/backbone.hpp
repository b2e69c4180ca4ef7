#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "pvqae/codebook.hpp"
#include "pvqae/types.hpp"

namespace pvqae {

/// Strided conv encoder; the last `levels` stages are tapped and projected to
/// embed_dim, forming the coarse-to-fine feature hierarchy.
struct EncoderImpl : torch::nn::Module {
    EncoderImpl(int64_t image_size, int64_t coarse_grid, int64_t levels, int64_t base_channels,
                int64_t embed_dim);

    FeatureHierarchy forward(const torch::Tensor& image);  // B x 3 x S x S in [0,1]

    int64_t image_size_, coarse_grid_, levels_;
    torch::nn::Sequential stem{nullptr};
    std::vector<torch::nn::Sequential> stages;
    std::vector<torch::nn::Conv2d> taps;  // taps[l] projects the level-l grid
};
TORCH_MODULE(Encoder);

/// Upsampling conv decoder from the assembled finest-grid feature map back to
/// an image in [0,1] (sigmoid output).
struct DecoderImpl : torch::nn::Module {
    DecoderImpl(int64_t image_size, int64_t finest_grid, int64_t base_channels, int64_t embed_dim);

    torch::Tensor forward(const torch::Tensor& features);  // B x d x G x G

    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(Decoder);

/// Patch-wise real/fake classifier; output is a spatial logit map (always
/// larger than 1x1).
struct DiscriminatorImpl : torch::nn::Module {
    explicit DiscriminatorImpl(int64_t base_channels);

    torch::Tensor forward(const torch::Tensor& image);

    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(Discriminator);

/// Quantize each coarse cell at its selected level and broadcast the codes
/// over the finest grid.
struct AssembledFeatures {
    torch::Tensor features;       // B x d x G x G straight-through quantized map
    std::vector<QuantizationResult> per_level;
    torch::Tensor encoder_selected;  // M x d rows of the hierarchy at selected cells
    torch::Tensor codes_selected;    // M x d matching code rows
    int64_t codes_used = 0;          // sum over images of 4^level per coarse cell
};

/// gate_gradient routes reconstruction gradients into the soft scores
/// (hard forward either way): weights are onehot + soft - sg[soft].
AssembledFeatures assemble(const BudgetMap& budget, const FeatureHierarchy& hierarchy,
                           Codebook& codebook, bool gate_gradient);

/// Non-saturating GAN losses on sigmoid(logits) with a 1e-6 clamp.
/// loss_d scores x against sg[x_hat]; loss_g rewards fooling the critic.
struct AdversarialLosses {
    torch::Tensor loss_d, loss_g;
};

AdversarialLosses adversarial_losses(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                                     const torch::Tensor& x, const torch::Tensor& x_hat);

}  // namespace pvqae
