#include "pvqae/backbone.hpp"

#include <cmath>

#include "pvqae/common.hpp"

namespace pvqae {

namespace nn = torch::nn;

namespace {

int64_t round8(double v) { return std::max<int64_t>(8, int64_t(std::round(v / 8.0)) * 8); }

int64_t stage_width(int64_t base, int64_t stage_idx) {
    static const double mult[] = {1.5, 2.0, 3.0, 4.0};
    return round8(double(base) * mult[std::min<int64_t>(stage_idx, 3)]);
}

nn::Sequential down_block(int64_t in, int64_t out, bool refine) {
    nn::Sequential seq(
        nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)),
        nn::GroupNorm(nn::GroupNormOptions(8, out)), nn::SiLU());
    if (refine) {
        seq->push_back(nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
        seq->push_back(nn::SiLU());
    }
    return seq;
}

int64_t log2_exact(int64_t v, const char* what) {
    int64_t n = 0;
    while (v > 1 && v % 2 == 0) {
        v /= 2;
        ++n;
    }
    if (v != 1) throw ConfigError(std::string(what) + " must be a power-of-two ratio");
    return n;
}

}  // namespace

EncoderImpl::EncoderImpl(int64_t image_size, int64_t coarse_grid, int64_t levels,
                         int64_t base_channels, int64_t embed_dim)
    : image_size_(image_size), coarse_grid_(coarse_grid), levels_(levels) {
    if (image_size % coarse_grid != 0)
        throw ConfigError("encoder: image size not divisible by the coarse grid");
    int64_t n_down = log2_exact(image_size / coarse_grid, "encoder: image/coarse-grid");
    if (n_down < levels)
        throw ConfigError("encoder: not enough downsampling stages for the level count");

    stem = register_module("stem", nn::Sequential(
        nn::Conv2d(nn::Conv2dOptions(3, base_channels, 3).padding(1)), nn::SiLU()));
    int64_t ch = base_channels;
    for (int64_t s = 0; s < n_down; ++s) {
        int64_t out = stage_width(base_channels, s);
        bool tapped = s >= n_down - levels;
        auto block = down_block(ch, out, /*refine=*/tapped);
        stages.push_back(register_module("stage_" + std::to_string(s), block));
        if (tapped) {
            auto tap = nn::Conv2d(nn::Conv2dOptions(out, embed_dim, 1));
            // taps are appended fine-to-coarse and reversed below via indexing
            taps.push_back(register_module("tap_" + std::to_string(s), tap));
        }
        ch = out;
    }
}

FeatureHierarchy EncoderImpl::forward(const torch::Tensor& image) {
    TORCH_CHECK(image.dim() == 4 && image.size(1) == 3, "encoder expects B x 3 x S x S");
    if (image.size(2) != image_size_ || image.size(3) != image_size_)
        throw ConfigError("encoder: input size " + std::to_string(image.size(2)) +
                          " does not match configured image size " + std::to_string(image_size_));
    FeatureHierarchy h;
    h.levels.resize(size_t(levels_));
    auto x = stem->forward(image);
    int64_t n_down = int64_t(stages.size());
    size_t tap_idx = 0;
    for (int64_t s = 0; s < n_down; ++s) {
        x = stages[size_t(s)]->forward(x);
        if (s >= n_down - levels_) {
            // stage s yields grid image/2^(s+1); the last stage is level 0 (coarsest)
            int64_t level = n_down - 1 - s;
            h.levels[size_t(level)] = taps[tap_idx++]->forward(x);
        }
    }
    return h;
}

DecoderImpl::DecoderImpl(int64_t image_size, int64_t finest_grid, int64_t base_channels,
                         int64_t embed_dim) {
    int64_t n_up = log2_exact(image_size / finest_grid, "decoder: image/finest-grid");
    int64_t ch = round8(double(base_channels) * 3.0);
    net = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(embed_dim, ch, 3).padding(1)), nn::SiLU());
    for (int64_t s = 0; s < n_up; ++s) {
        int64_t out = std::max<int64_t>(24, round8(double(ch) / 2.0));
        net->push_back(nn::Upsample(
            nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest)));
        net->push_back(nn::Conv2d(nn::Conv2dOptions(ch, out, 3).padding(1)));
        net->push_back(nn::GroupNorm(nn::GroupNormOptions(8, out)));
        net->push_back(nn::SiLU());
        ch = out;
    }
    net->push_back(nn::Conv2d(nn::Conv2dOptions(ch, 3, 3).padding(1)));
    net->push_back(nn::Sigmoid());
    register_module("net", net);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& features) {
    return net->forward(features);
}

DiscriminatorImpl::DiscriminatorImpl(int64_t base_channels) {
    auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
    net = nn::Sequential(
        nn::Conv2d(nn::Conv2dOptions(3, base_channels, 4).stride(2).padding(1)), lrelu(),
        nn::Conv2d(nn::Conv2dOptions(base_channels, base_channels * 2, 4).stride(2).padding(1)),
        nn::GroupNorm(nn::GroupNormOptions(8, base_channels * 2)), lrelu(),
        nn::Conv2d(nn::Conv2dOptions(base_channels * 2, 1, 4).padding(1)));
    register_module("net", net);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) {
    auto logits = net->forward(image);
    TORCH_CHECK(logits.size(2) > 1 && logits.size(3) > 1, "discriminator map collapsed to 1x1");
    return logits;
}

AssembledFeatures assemble(const BudgetMap& budget, const FeatureHierarchy& hierarchy,
                           Codebook& codebook, bool gate_gradient) {
    TORCH_CHECK(budget.hard.defined(), "assemble: budget has no hard selections");
    int64_t levels = hierarchy.num_levels();
    int64_t g = hierarchy.coarse_grid();
    int64_t finest = hierarchy.finest_grid();
    TORCH_CHECK(budget.hard.size(1) == g && budget.hard.size(2) == g,
                "assemble: budget grid does not match the coarse grid");
    auto max_level = budget.hard.max().item<int64_t>();
    auto min_level = budget.hard.min().item<int64_t>();
    if (min_level < 0 || max_level >= levels)
        throw IntegrityError("assemble: budget selects a level outside the hierarchy");

    bool st = gate_gradient && budget.soft.defined();
    torch::Tensor features;
    std::vector<QuantizationResult> per_level;
    std::vector<torch::Tensor> z_rows, q_rows;
    int64_t codes_used = 0;

    for (int64_t l = 0; l < levels; ++l) {
        auto z = hierarchy.levels[size_t(l)].permute({0, 2, 3, 1});  // B x g_l x g_l x d
        auto q = codebook->quantize_grid(z, l);
        per_level.push_back(q);

        auto selected = budget.hard == l;  // B x g x g
        int64_t cell_repeat = z.size(1) / g;
        auto mask_level = selected.repeat_interleave(cell_repeat, 1).repeat_interleave(cell_repeat, 2);
        z_rows.push_back(z.masked_select(mask_level.unsqueeze(-1)).reshape({-1, z.size(3)}));
        q_rows.push_back(q.codes.masked_select(mask_level.unsqueeze(-1)).reshape({-1, z.size(3)}));
        codes_used += selected.sum().item<int64_t>() * cell_repeat * cell_repeat;

        // Straight-through codes, broadcast onto the finest grid. Written as
        // sg[q] + (z - sg[z]) so the forward value is bit-exactly the code
        // while gradients pass unchanged to the encoder and skip the codes.
        auto st_codes = q.codes.detach() + (z - z.detach());
        int64_t broadcast = finest / z.size(1);
        auto full = st_codes.repeat_interleave(broadcast, 1).repeat_interleave(broadcast, 2);

        auto weight = selected.to(full.dtype());
        if (st) {
            // (soft - sg[soft]) is exactly zero forward, so the hard one-hot
            // value survives while gradients reach the gate scores.
            auto soft_l = budget.soft.select(-1, l).to(full.dtype());
            weight = weight + (soft_l - soft_l.detach());
        }
        int64_t coarse_repeat = finest / g;
        auto w_full =
            weight.repeat_interleave(coarse_repeat, 1).repeat_interleave(coarse_repeat, 2);
        auto contrib = w_full.unsqueeze(-1) * full;
        features = features.defined() ? features + contrib : contrib;
    }

    AssembledFeatures out;
    out.features = features.permute({0, 3, 1, 2});
    out.per_level = std::move(per_level);
    out.encoder_selected = torch::cat(z_rows, 0);
    out.codes_selected = torch::cat(q_rows, 0);
    out.codes_used = codes_used;
    return out;
}

AdversarialLosses adversarial_losses(
    const std::function<torch::Tensor(const torch::Tensor&)>& critic, const torch::Tensor& x,
    const torch::Tensor& x_hat) {
    TORCH_CHECK(x.sizes() == x_hat.sizes(), "adversarial_losses: shape mismatch");
    constexpr double eps = 1e-6;
    auto p_real = torch::sigmoid(critic(x)).clamp(eps, 1.0 - eps);
    auto p_fake = torch::sigmoid(critic(x_hat.detach())).clamp(eps, 1.0 - eps);
    auto loss_d = -(p_real.log().mean() + (1.0 - p_fake).log().mean());
    auto p_fool = torch::sigmoid(critic(x_hat)).clamp(eps, 1.0 - eps);
    auto loss_g = -p_fool.log().mean();
    return {loss_d, loss_g};
}

}  // namespace pvqae
