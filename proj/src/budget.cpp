#include "pvqae/budget.hpp"

#include <cmath>

#include "pvqae/common.hpp"

namespace pvqae {

torch::Tensor HaarSubbands::details() const {
    return torch::cat({lh.reshape(-1), hl.reshape(-1), hh.reshape(-1)});
}

HaarSubbands dwt_haar(const torch::Tensor& patch) {
    TORCH_CHECK(patch.dim() == 2 && patch.size(0) == patch.size(1), "dwt_haar expects a square patch");
    int64_t p = patch.size(0);
    if (p % 2 != 0) throw ConfigError("dwt_haar: patch side must be even, got " + std::to_string(p));

    using namespace torch::indexing;
    auto a = patch.index({Slice(0, None, 2), Slice(0, None, 2)});
    auto b = patch.index({Slice(0, None, 2), Slice(1, None, 2)});
    auto c = patch.index({Slice(1, None, 2), Slice(0, None, 2)});
    auto d = patch.index({Slice(1, None, 2), Slice(1, None, 2)});
    return {(a + b + c + d) / 2,   // ll
            (a - b + c - d) / 2,   // lh: horizontal differences
            (a + b - c - d) / 2,   // hl: vertical differences
            (a - b - c + d) / 2};  // hh: diagonal
}

ContextRichness context_entropy(const torch::Tensor& image, int64_t coarse_grid) {
    torch::Tensor gray;
    if (image.dim() == 3) {
        gray = image.mean(0);
    } else if (image.dim() == 2) {
        gray = image;
    } else {
        throw ConfigError("context_entropy: expected (C,S,S) or (S,S) image");
    }
    int64_t side = gray.size(0);
    TORCH_CHECK(gray.size(1) == side, "context_entropy expects a square image");
    if (coarse_grid < 1 || side % coarse_grid != 0)
        throw ConfigError("context_entropy: image side must divide into the coarse grid");
    int64_t p = side / coarse_grid;
    if (p % 2 != 0)
        throw ConfigError("context_entropy: cell patches must have even side, got " + std::to_string(p));

    // (g, g, p, p) cell view, then the Haar butterflies on the last two dims.
    auto cells = gray.to(torch::kDouble)
                     .reshape({coarse_grid, p, coarse_grid, p})
                     .permute({0, 2, 1, 3});
    using namespace torch::indexing;
    auto a = cells.index({Ellipsis, Slice(0, None, 2), Slice(0, None, 2)});
    auto b = cells.index({Ellipsis, Slice(0, None, 2), Slice(1, None, 2)});
    auto c = cells.index({Ellipsis, Slice(1, None, 2), Slice(0, None, 2)});
    auto d = cells.index({Ellipsis, Slice(1, None, 2), Slice(1, None, 2)});
    auto lh = (a - b + c - d) / 2;
    auto hl = (a + b - c - d) / 2;
    auto hh = (a - b - c + d) / 2;
    auto details =
        torch::cat({lh.flatten(2), hl.flatten(2), hh.flatten(2)}, 2).abs();  // g x g x 3(p/2)^2

    int64_t count = details.size(2);
    auto mass = details.sum(2, /*keepdim=*/true);
    auto has_mass = mass.squeeze(2) > 0;
    auto prob = details / mass.clamp_min(1e-300);
    // 0 * log 0 := 0; entropy normalized by log(count) so raw lies in [0,1].
    auto plogp = torch::where(prob > 0, prob * prob.clamp_min(1e-300).log(), torch::zeros_like(prob));
    auto raw = -plogp.sum(2) / std::log(double(count));
    raw = torch::where(has_mass, raw, torch::zeros_like(raw)).clamp(0.0, 1.0);

    auto total = raw.sum();
    torch::Tensor normalized;
    if (total.item<double>() > 0) {
        normalized = raw / total;
    } else {
        normalized = torch::full_like(raw, 1.0 / double(coarse_grid * coarse_grid));
    }
    return {raw, normalized};
}

torch::Tensor budget_loss(const BudgetMap& budget, const ContextRichness& richness,
                          const BudgetLossConfig& cfg) {
    TORCH_CHECK(budget.soft.defined(), "budget_loss needs soft scores");
    if (cfg.cost_factor <= 1) throw ConfigError("budget_loss: cost factor must be > 1");
    if (cfg.epsilon_floor <= 0) throw ConfigError("budget_loss: epsilon floor must be > 0");

    auto soft = budget.soft.to(torch::kDouble);  // B x g x g x L
    TORCH_CHECK(soft.dim() == 4, "budget_loss expects B x g x g x L soft scores");
    int64_t levels = soft.size(3);
    auto entropy = (cfg.use_normalized ? richness.normalized : richness.raw).to(torch::kDouble);
    TORCH_CHECK(entropy.size(0) == soft.size(1) && entropy.size(1) == soft.size(2),
                "budget_loss: richness grid does not match the budget grid");

    auto level_cost = torch::pow(
        cfg.cost_factor, torch::arange(levels, torch::kDouble));      // {1, c, c^2, ...}
    auto cell_cost = (soft * level_cost).sum(3);                      // B x g x g
    auto base = 1.0 / entropy.clamp_min(cfg.epsilon_floor);           // context discount
    auto total = (cell_cost * base.unsqueeze(0)).sum(std::vector<int64_t>{1, 2});

    double cells = double(soft.size(1) * soft.size(2));
    if (cfg.cell_mean) total = total / (cells * cells);
    return total.mean();  // mean over the batch
}

double lambda_schedule(int64_t step, int64_t total_steps, double lambda_max,
                       const std::string& kind) {
    if (step < 0 || total_steps < 1 || step > total_steps)
        throw ConfigError("lambda_schedule: need 0 <= step <= total_steps");
    if (kind == "constant") return lambda_max;
    if (kind == "linear") return lambda_max * double(step) / double(total_steps);
    if (kind == "cosine") {
        if (step == 0) return 0.0;
        if (step == total_steps) return lambda_max;
        return lambda_max * (1.0 - std::cos(M_PI * double(step) / double(total_steps))) / 2.0;
    }
    throw ConfigError("lambda_schedule: unknown kind '" + kind + "'");
}

}  // namespace pvqae
