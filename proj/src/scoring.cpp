#include "pvqae/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pvqae/common.hpp"

namespace pvqae {

torch::Tensor s_prior(const torch::Tensor& budget_soft, const torch::Tensor& prior_dists) {
    TORCH_CHECK(budget_soft.dim() == 3 && budget_soft.sizes() == prior_dists.sizes(),
                "s_prior: expected matching g x g x L tensors");
    auto b = budget_soft.to(torch::kDouble);
    auto p = prior_dists.to(torch::kDouble);
    auto ce = -(b * (p + 1e-12).log()).sum(-1);
    // The 1e-12 inside the log can leave tiny negatives when p == 1; clamp,
    // then the additive epsilon turns an all-zero map into a uniform one.
    ce = ce.clamp_min(0.0) + 1e-12;
    return ce / ce.sum();
}

torch::Tensor s_recon(const torch::Tensor& x, const torch::Tensor& x_hat) {
    TORCH_CHECK(x.sizes() == x_hat.sizes(), "s_recon: shape mismatch");
    TORCH_CHECK(x.dim() == 3, "s_recon: expected C x H x W");
    return (x_hat - x).square().sum(0);
}

torch::Tensor gaussian_smooth(const torch::Tensor& map, double sigma) {
    TORCH_CHECK(map.dim() == 2, "gaussian_smooth: expected H x W");
    if (sigma <= 0) return map;
    int64_t radius = std::max<int64_t>(1, int64_t(std::ceil(3.0 * sigma)));
    auto xs = torch::arange(-radius, radius + 1, map.options().dtype(torch::kDouble));
    auto kernel = (-(xs * xs) / (2.0 * sigma * sigma)).exp();
    kernel = (kernel / kernel.sum()).to(map.dtype());

    namespace F = torch::nn::functional;
    auto x = map.unsqueeze(0).unsqueeze(0);
    x = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReflect));
    x = torch::conv2d(x, kernel.reshape({1, 1, 1, 2 * radius + 1}));
    x = torch::conv2d(x, kernel.reshape({1, 1, 2 * radius + 1, 1}));
    return x.squeeze(0).squeeze(0);
}

ScoreMap defect_score(const torch::Tensor& s_prior_cells, const torch::Tensor& s_recon_map,
                      double smoothing_sigma) {
    TORCH_CHECK(s_prior_cells.dim() == 2 && s_recon_map.dim() == 2, "defect_score: expected 2-d maps");
    int64_t h = s_recon_map.size(0);
    int64_t g = s_prior_cells.size(0);
    TORCH_CHECK(h % g == 0 && s_recon_map.size(1) % s_prior_cells.size(1) == 0,
                "defect_score: prior grid does not tile the pixel map");
    auto prior_full = s_prior_cells.to(s_recon_map.dtype())
                          .repeat_interleave(h / g, 0)
                          .repeat_interleave(s_recon_map.size(1) / s_prior_cells.size(1), 1);
    auto product = prior_full * s_recon_map;
    auto smoothed = gaussian_smooth(product, smoothing_sigma);

    ScoreMap out;
    out.s = smoothed;
    out.s_prior_cells = s_prior_cells;
    out.s_recon = s_recon_map;
    out.image_score = smoothed.max().item<double>();
    return out;
}

ScoreMap recon_only_score(const torch::Tensor& s_recon_map, double smoothing_sigma) {
    ScoreMap out;
    out.s = gaussian_smooth(s_recon_map, smoothing_sigma);
    out.s_recon = s_recon_map;
    out.image_score = out.s.max().item<double>();
    return out;
}

torch::Tensor threshold(const torch::Tensor& score_map, double t) {
    return (score_map > t).to(torch::kFloat);
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    TORCH_CHECK(scores.size() == labels.size() && !scores.empty(), "auroc: bad inputs");
    int64_t n_pos = std::count(labels.begin(), labels.end(), 1);
    int64_t n_neg = int64_t(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("auroc undefined: both classes must be present");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie groups, accumulate positive-label ranks.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = (double(i + 1) + double(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double u = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

namespace {

std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10f", v);
    return buf;
}

void append_row(std::string& out, const CategoryMetrics& m) {
    out += m.category + "," + fmt_metric(m.image_auroc) + "," + fmt_metric(m.pixel_auroc) + "," +
           std::to_string(m.n_images) + "," + std::to_string(m.n_pixels) + "\n";
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
    std::string out = "category,image_auroc,pixel_auroc,n_images,n_pixels\n";
    for (const auto& m : report.per_category) append_row(out, m);
    append_row(out, report.overall);
    return out;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write metrics CSV: " + path);
    f << metrics_csv(report);
}

void write_level_grid_csv(const std::string& path, const torch::Tensor& hard) {
    TORCH_CHECK(hard.dim() == 2, "write_level_grid_csv: expected a 2-d grid");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write level grid CSV: " + path);
    auto grid = hard.to(torch::kLong).contiguous();
    auto acc = grid.accessor<int64_t, 2>();
    for (int64_t r = 0; r < grid.size(0); ++r) {
        for (int64_t c = 0; c < grid.size(1); ++c)
            f << acc[r][c] << (c + 1 < grid.size(1) ? "," : "");
        f << "\n";
    }
}

}  // namespace pvqae
