#include "pvqae/codebook.hpp"

#include "pvqae/common.hpp"

namespace pvqae {

namespace {

// First index attaining the row minimum; strict comparison keeps ties at the
// lowest index regardless of backend argmin behavior.
torch::Tensor first_min_indices(const torch::Tensor& dist) {
    auto d = dist.contiguous();
    int64_t rows = d.size(0), cols = d.size(1);
    auto out = torch::empty({rows}, torch::kLong);
    auto acc = d.accessor<float, 2>();
    auto* idx = out.data_ptr<int64_t>();
    for (int64_t r = 0; r < rows; ++r) {
        float best = acc[r][0];
        int64_t arg = 0;
        for (int64_t k = 1; k < cols; ++k) {
            if (acc[r][k] < best) {
                best = acc[r][k];
                arg = k;
            }
        }
        idx[r] = arg;
    }
    return out;
}

}  // namespace

CodebookImpl::CodebookImpl(int64_t levels, int64_t codes_per_level, int64_t code_dim)
    : code_dim_(code_dim) {
    TORCH_CHECK(levels >= 1 && codes_per_level >= 2 && code_dim >= 1, "bad codebook shape");
    double bound = 1.0 / double(codes_per_level);
    for (int64_t l = 0; l < levels; ++l) {
        auto q = torch::empty({codes_per_level, code_dim}).uniform_(-bound, bound);
        books_.push_back(register_parameter("level_" + std::to_string(l), q));
    }
}

std::pair<int64_t, torch::Tensor> CodebookImpl::lookup(const torch::Tensor& z, int64_t level) const {
    TORCH_CHECK(z.dim() == 1 && z.size(0) == code_dim_, "lookup expects an n-vector");
    if (!z.isfinite().all().item<bool>())
        throw NumericError("codebook lookup: embedding has non-finite entries");
    auto res = quantize_grid(z.unsqueeze(0), level);
    return {res.indices[0].item<int64_t>(), res.codes[0]};
}

QuantizationResult CodebookImpl::quantize_grid(const torch::Tensor& grid, int64_t level) const {
    TORCH_CHECK(level >= 0 && level < num_levels(), "quantize_grid: level out of range");
    TORCH_CHECK(grid.dim() >= 1 && grid.size(-1) == code_dim_,
                "quantize_grid: trailing dim must be the code dimension");
    const auto& book = books_[size_t(level)];
    auto lead = grid.sizes().vec();
    lead.pop_back();
    auto flat = grid.reshape({-1, code_dim_}).to(torch::kFloat);

    // Direct (z - q)^2 distances, chunked to bound the temporary.
    int64_t rows = flat.size(0);
    int64_t chunk = std::max<int64_t>(1, (1 << 22) / std::max<int64_t>(1, book.size(0) * code_dim_));
    std::vector<torch::Tensor> parts;
    {
        torch::NoGradGuard no_grad;
        auto bookf = book.detach().to(torch::kFloat);
        for (int64_t r = 0; r < rows; r += chunk) {
            auto part = flat.slice(0, r, std::min(rows, r + chunk));
            auto dist = (part.unsqueeze(1) - bookf.unsqueeze(0)).square().sum(2);
            parts.push_back(first_min_indices(dist));
        }
    }
    auto indices = torch::cat(parts);
    auto codes = book.index_select(0, indices);

    auto code_shape = lead;
    code_shape.push_back(code_dim_);
    return {indices.reshape(lead), codes.reshape(code_shape), level};
}

VqLossTerms vq_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                    const torch::Tensor& encoder_out, const torch::Tensor& quantized,
                    double beta) {
    if (beta < 0) throw ConfigError("vq_loss: beta must be >= 0");
    TORCH_CHECK(x.sizes() == x_hat.sizes(), "vq_loss: x and x_hat shapes differ");
    TORCH_CHECK(encoder_out.sizes() == quantized.sizes(),
                "vq_loss: encoder output and quantized shapes differ");

    auto recon = (x_hat - x).square().mean();
    torch::Tensor cb, commit;
    if (encoder_out.numel() == 0) {
        cb = torch::zeros({}, recon.options());
        commit = torch::zeros({}, recon.options());
    } else {
        cb = (encoder_out.detach() - quantized).square().mean();
        commit = beta * (quantized.detach() - encoder_out).square().mean();
    }
    return {recon + cb + commit, recon, cb, commit};
}

}  // namespace pvqae
