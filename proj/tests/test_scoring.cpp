#include <torch/torch.h>

#include <cmath>
#include <random>

#include "pvqae/common.hpp"
#include "pvqae/scoring.hpp"

#include "doctest_compat.hpp"

using namespace pvqae;

namespace {

// O(n^2) pair-counting AUROC oracle: ties count one half.
double pair_count_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / double(pairs);
}

}  // namespace

TEST_CASE("s_recon: identity, single-pixel, homogeneity") {
    auto x = torch::rand({3, 4, 4});
    CHECK(s_recon(x, x).abs().max().item<double>() == 0.0);

    auto x_hat = x.clone();
    x_hat[1][2][3] += 0.5f;
    auto map = s_recon(x, x_hat);
    CHECK(map[2][3].item<double>() == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(map.sum().item<double>() == doctest::Approx(0.25).epsilon(1e-6));

    auto map2 = s_recon(x, x + 2 * (x_hat - x));
    CHECK(map2[2][3].item<double>() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("s_prior: perfect agreement yields a uniform cell map") {
    auto b = torch::zeros({2, 2, 3}, torch::kDouble);
    b.index_put_({torch::indexing::Ellipsis, 1}, 1.0);
    auto map = s_prior(b, b);
    CHECK(map.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK((map - 0.25).abs().max().item<double>() < 1e-6);
}

TEST_CASE("s_prior: a confident mismatch dominates the map") {
    double eps = 1e-6;
    auto b = torch::zeros({1, 2, 3}, torch::kDouble);
    b[0][0][0] = 1.0;  // observed level 0
    b[0][1][1] = 1.0;  // observed level 1
    auto p = torch::zeros({1, 2, 3}, torch::kDouble);
    p[0][0] = torch::tensor({eps, 1 - 2 * eps, eps}, torch::kDouble);  // prior disagrees
    p[0][1] = torch::tensor({eps, 1 - 2 * eps, eps}, torch::kDouble);  // prior agrees
    auto map = s_prior(b, p);
    CHECK(map[0][0].item<double>() > 0.99);
    CHECK(map.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("defect_score: upsample-product example with sigma 0") {
    auto prior = torch::tensor({{0.7, 0.1}, {0.1, 0.1}}, torch::kDouble);
    auto recon = torch::ones({4, 4}, torch::kDouble);
    auto score = defect_score(prior, recon, 0.0);
    CHECK(score.s[0][0].item<double>() == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(score.s[1][1].item<double>() == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(score.s[0][2].item<double>() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(score.s[3][3].item<double>() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(score.image_score == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("defect_score: zero reconstruction error annihilates the map") {
    auto prior = torch::rand({2, 2}, torch::kDouble);
    auto score = defect_score(prior / prior.sum(), torch::zeros({8, 8}, torch::kDouble), 2.0);
    CHECK(score.s.abs().max().item<double>() == 0.0);
}

TEST_CASE("defect_score: uniform prior is proportional to s_recon") {
    torch::manual_seed(41);
    auto recon = torch::rand({8, 8}, torch::kDouble);
    auto prior = torch::full({2, 2}, 0.25, torch::kDouble);
    auto score = defect_score(prior, recon, 0.0);
    CHECK((score.s - 0.25 * recon).abs().max().item<double>() < 1e-12);
}

TEST_CASE("defect_score: sigma 0 equals the upsample-product oracle on random inputs") {
    torch::manual_seed(42);
    for (int trial = 0; trial < 10; ++trial) {
        auto prior = torch::rand({4, 4}, torch::kDouble);
        prior = prior / prior.sum();
        auto recon = torch::rand({16, 16}, torch::kDouble);
        auto score = defect_score(prior, recon, 0.0);
        auto oracle = prior.repeat_interleave(4, 0).repeat_interleave(4, 1) * recon;
        CHECK(torch::equal(score.s, oracle));
    }
}

TEST_CASE("gaussian_smooth: sigma 0 is the identity; impulse response is symmetric") {
    auto m = torch::rand({6, 6});
    CHECK(torch::equal(gaussian_smooth(m, 0.0), m));

    auto impulse = torch::zeros({9, 9}, torch::kDouble);
    impulse[4][4] = 1.0;
    auto blurred = gaussian_smooth(impulse, 1.0);
    CHECK(blurred[4][4].item<double>() == blurred.max().item<double>());
    CHECK(blurred[4][2].item<double>() == doctest::Approx(blurred[4][6].item<double>()).epsilon(1e-12));
    CHECK(blurred[2][4].item<double>() == doctest::Approx(blurred[6][4].item<double>()).epsilon(1e-12));
}

TEST_CASE("threshold: endpoints and strictness") {
    auto m = torch::tensor({{0.1, 0.5}, {0.9, 0.5}}, torch::kDouble);
    CHECK(threshold(m, 0.0).sum().item<double>() == 4.0);
    CHECK(threshold(m, 1.0).sum().item<double>() == 0.0);
    auto at = threshold(m, 0.5);
    CHECK(at[0][1].item<float>() == 0.0f);  // strict: equal is below
    CHECK(at[1][0].item<float>() == 1.0f);
}

TEST_CASE("threshold: antitone in t") {
    torch::manual_seed(43);
    auto m = torch::rand({8, 8}, torch::kDouble);
    auto prev = threshold(m, -1.0);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 1.1}) {
        auto cur = threshold(m, t);
        CHECK((cur <= prev).all().item<bool>());
        prev = cur;
    }
}

TEST_CASE("auroc: canonical values") {
    CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
    CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), MetricError);
}

TEST_CASE("auroc: agrees with the pair-counting oracle on random sets") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> unif(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 5 + rng() % 60;
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool any0 = false, any1 = false;
        for (size_t i = 0; i < n; ++i) {
            // Quantized scores produce frequent ties.
            scores[i] = std::round(unif(rng) * 8) / 8.0;
            labels[i] = rng() % 2;
            (labels[i] ? any1 : any0) = true;
        }
        if (!any0) labels[0] = 0;
        if (!any1) labels[n - 1] = 1;
        CHECK(std::abs(auroc(scores, labels) - pair_count_auroc(scores, labels)) <= 1e-12);
    }
}

TEST_CASE("auroc: invariant under strictly monotone transforms") {
    std::mt19937_64 rng(45);
    std::uniform_real_distribution<double> unif(0, 1);
    std::vector<double> scores(40);
    std::vector<int> labels(40);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = unif(rng);
        labels[i] = rng() % 2;
    }
    labels[0] = 0;
    labels[1] = 1;
    double base = auroc(scores, labels);
    auto mapped = scores;
    for (auto& s : mapped) s = std::exp(3 * s) + 1;
    CHECK(auroc(mapped, labels) == base);
}

TEST_CASE("metrics csv: stable layout") {
    MetricsReport report;
    report.per_category.push_back({"class_0", 0.9, 0.8, 10, 1000});
    report.overall = {"overall", 0.9, 0.8, 10, 1000};
    auto csv = metrics_csv(report);
    CHECK(csv.find("category,image_auroc,pixel_auroc,n_images,n_pixels\n") == 0);
    CHECK(csv.find("class_0,0.9000000000,0.8000000000,10,1000\n") != std::string::npos);
    CHECK(csv.find("overall,") != std::string::npos);
}
