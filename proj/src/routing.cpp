#include "pvqae/routing.hpp"

#include <cmath>

#include "pvqae/common.hpp"

namespace pvqae {

torch::Tensor gumbel_softmax(const torch::Tensor& logits, double tau, const torch::Tensor& noise) {
    if (tau <= 0) throw ConfigError("gumbel_softmax: tau must be > 0");
    auto x = logits.to(torch::kDouble);
    if (noise.defined()) x = x + noise.to(torch::kDouble);
    x = (x - std::get<0>(x.max(-1, /*keepdim=*/true))) / tau;
    auto e = x.exp();
    return e / e.sum(-1, /*keepdim=*/true);
}

torch::Tensor sample_gumbel(torch::IntArrayRef shape, torch::Generator& gen) {
    auto u = torch::rand(shape, gen, torch::kDouble).clamp(1e-12, 1.0 - 1e-12);
    return -(-(u.log())).log();
}

double temperature_schedule(int64_t step, int64_t total_steps, double tau_start, double tau_end) {
    if (!(tau_start >= tau_end && tau_end > 0))
        throw ConfigError("temperature_schedule: need tau_start >= tau_end > 0");
    if (step < 0 || total_steps < 1 || step > total_steps)
        throw ConfigError("temperature_schedule: need 0 <= step <= total_steps");
    if (step == 0) return tau_start;
    if (step == total_steps) return tau_end;
    return tau_start * std::pow(tau_end / tau_start, double(step) / double(total_steps));
}

DynamicRouterImpl::DynamicRouterImpl(int64_t levels, int64_t embed_dim)
    : levels_(levels), embed_dim_(embed_dim) {
    int64_t in = levels * embed_dim;
    hidden = register_module("hidden", torch::nn::Linear(in, 4 * in));
    out = register_module("out", torch::nn::Linear(4 * in, levels));
}

torch::Tensor DynamicRouterImpl::pooled_features(const FeatureHierarchy& hierarchy) const {
    TORCH_CHECK(hierarchy.num_levels() == levels_, "router level count mismatch");
    int64_t g = hierarchy.coarse_grid();
    std::vector<torch::Tensor> pooled;
    pooled.reserve(size_t(levels_));
    for (int64_t l = 0; l < levels_; ++l) {
        auto feat = hierarchy.levels[size_t(l)];
        int64_t factor = feat.size(2) / g;
        TORCH_CHECK(factor * g == feat.size(2), "hierarchy grid does not reduce to the coarse grid");
        pooled.push_back(factor == 1 ? feat : torch::avg_pool2d(feat, factor));
    }
    return torch::cat(pooled, 1);
}

torch::Tensor DynamicRouterImpl::gate_logits(const FeatureHierarchy& hierarchy) {
    auto x = pooled_features(hierarchy);          // B x L*d x g x g
    x = x.permute({0, 2, 3, 1});                  // B x g x g x L*d
    return out(torch::relu(hidden(x)));           // B x g x g x L
}

BudgetMap DynamicRouterImpl::route(const FeatureHierarchy& hierarchy, double tau,
                                   std::optional<torch::Generator> gen, RouteMode mode) {
    if (tau <= 0) throw ConfigError("route: tau must be > 0");
    auto logits = gate_logits(hierarchy);
    torch::Tensor noise;
    if (mode == RouteMode::train_soft) {
        TORCH_CHECK(gen.has_value(), "route: train_soft needs a noise generator");
        noise = sample_gumbel(logits.sizes(), *gen);
    }
    auto soft = gumbel_softmax(logits, tau, noise);
    return {soft, soft.argmax(-1), mode};
}

}  // namespace pvqae
