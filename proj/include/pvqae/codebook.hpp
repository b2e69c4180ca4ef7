#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

namespace pvqae {

/// Nearest-code assignment over an arbitrary grid of embeddings.
/// indices: leading dims of the input grid, int64 in [0, K); codes: same
/// leading dims x n, rows gathered from the codebook (differentiable
/// w.r.t. the codebook entries).
struct QuantizationResult {
    torch::Tensor indices;
    torch::Tensor codes;
    int64_t level = 0;
};

/// One K x n table of discrete codes per resolution level, initialized
/// uniformly in [-1/K, 1/K]. Lookup is exhaustive nearest-neighbor in
/// squared euclidean distance; ties break to the lowest index.
struct CodebookImpl : torch::nn::Module {
    CodebookImpl(int64_t levels, int64_t codes_per_level, int64_t code_dim);

    const torch::Tensor& codes(int64_t level) const { return books_.at(size_t(level)); }
    int64_t num_levels() const { return int64_t(books_.size()); }
    int64_t code_dim() const { return code_dim_; }

    /// Single-vector lookup; z is an n-vector. Non-finite z is a numeric error.
    std::pair<int64_t, torch::Tensor> lookup(const torch::Tensor& z, int64_t level) const;

    /// grid: (... x n) embeddings, all quantized against level's table.
    QuantizationResult quantize_grid(const torch::Tensor& grid, int64_t level) const;

    int64_t code_dim_;
    std::vector<torch::Tensor> books_;
};
TORCH_MODULE(Codebook);

/// The three VQ objectives plus their sum. Means over elements; stop-gradient
/// placement follows the standard form: the codebook term updates only the
/// codes, the commitment term only the encoder.
struct VqLossTerms {
    torch::Tensor total, reconstruction, codebook, commitment;
};

VqLossTerms vq_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                    const torch::Tensor& encoder_out, const torch::Tensor& quantized,
                    double beta);

}  // namespace pvqae
