#include "pvqae/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "pvqae/common.hpp"

namespace fs = std::filesystem;

namespace pvqae {

namespace {

BudgetLossConfig budget_cfg(const RunConfig& cfg) {
    return {cfg.effective_cost_factor(), cfg.lambda_max, cfg.epsilon_floor,
            cfg.entropy_normalized, cfg.budget_cell_mean};
}

torch::Tensor batch_entropy(const torch::Tensor& batch, int64_t coarse_grid, bool normalized) {
    std::vector<torch::Tensor> rows;
    rows.reserve(size_t(batch.size(0)));
    for (int64_t i = 0; i < batch.size(0); ++i) {
        auto r = context_entropy(batch[i], coarse_grid);
        rows.push_back(normalized ? r.normalized : r.raw);
    }
    return torch::stack(rows);
}

struct EpochAccumulator {
    double recon = 0, codebook = 0, commitment = 0, budget = 0, loss_g = 0, loss_d = 0;
    double lambda_first = 0, tau_first = 0;
    int64_t steps = 0;
    std::vector<int64_t> level_counts;
    std::vector<std::set<int64_t>> codes_seen;
    int64_t codes_used = 0, images = 0;

    void init(int64_t levels) {
        level_counts.assign(size_t(levels), 0);
        codes_seen.assign(size_t(levels), {});
    }
};

void write_log_header(std::ofstream& log, int64_t levels) {
    log << "epoch,step,recon,codebook,commitment,budget,loss_g,loss_d,lambda,tau,mean_codes_used";
    for (int64_t l = 0; l < levels; ++l) log << ",level_" << l << "_frac";
    for (int64_t l = 0; l < levels; ++l) log << ",level_" << l << "_code_util";
    log << "\n";
}

void write_log_row(std::ofstream& log, int64_t epoch, int64_t step, const EpochAccumulator& acc,
                   int64_t codebook_size) {
    if (!log.is_open()) return;
    double n = double(std::max<int64_t>(1, acc.steps));
    int64_t cells = std::accumulate(acc.level_counts.begin(), acc.level_counts.end(), int64_t(0));
    log << epoch << "," << step << "," << acc.recon / n << "," << acc.codebook / n << ","
        << acc.commitment / n << "," << acc.budget / n << "," << acc.loss_g / n << ","
        << acc.loss_d / n << "," << acc.lambda_first << "," << acc.tau_first << ","
        << double(acc.codes_used) / double(std::max<int64_t>(1, acc.images));
    for (auto c : acc.level_counts) log << "," << double(c) / double(std::max<int64_t>(1, cells));
    for (const auto& seen : acc.codes_seen)
        log << "," << double(seen.size()) / double(codebook_size);
    log << "\n" << std::flush;
}

void dump_divergence(const std::string& log_dir, int64_t step,
                     const std::vector<std::pair<std::string, double>>& values) {
    nlohmann::json diag;
    diag["step"] = step;
    for (const auto& [k, v] : values) diag[k] = v;
    if (!log_dir.empty()) {
        std::ofstream f(fs::path(log_dir) / "divergence.json");
        f << diag.dump(2) << "\n";
    }
    std::cerr << "numeric divergence at step " << step << ": " << diag.dump() << "\n";
}

}  // namespace

PvqaeModel train_stage1(const RunConfig& cfg, const DatasetManifest& manifest,
                        const std::string& log_dir) {
    validate(cfg);
    if (manifest.train.empty()) throw ConfigError("train split is empty");
    for (const auto& s : manifest.train)
        if (s.defect) throw IntegrityError("train split contains a defect sample: " + s.path);
    if (manifest.image_size != cfg.image_size)
        throw ConfigError("manifest image size does not match the config");

    torch::manual_seed(uint64_t(cfg.seed));
    PvqaeModel model = PvqaeModel::build(cfg, manifest.categories);
    model.train_mode(true);

    std::vector<torch::Tensor> gen_params;
    for (auto& m : {model.encoder->parameters(), model.decoder->parameters(),
                    model.codebook->parameters(), model.router->parameters()})
        gen_params.insert(gen_params.end(), m.begin(), m.end());
    torch::optim::Adam opt_g(gen_params, torch::optim::AdamOptions(cfg.lr));
    torch::optim::Adam opt_d(model.discriminator->parameters(), torch::optim::AdamOptions(cfg.lr));

    auto noise_gen = torch::make_generator<torch::CPUGeneratorImpl>(uint64_t(cfg.seed) + 1);
    std::mt19937_64 shuffle_rng(uint64_t(cfg.seed) + 2);
    std::mt19937_64 aug_rng(uint64_t(cfg.seed) + 3);
    AugmentationConfig aug{cfg.hflip_prob, cfg.vflip_prob, cfg.jitter_strength};

    std::vector<size_t> order(manifest.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    size_t cursor = 0;

    std::ofstream log;
    if (!log_dir.empty()) {
        fs::create_directories(log_dir);
        log.open(fs::path(log_dir) / "train_log.csv", std::ios::binary);
        write_log_header(log, cfg.levels);
    }

    int64_t steps_per_epoch =
        std::max<int64_t>(1, int64_t((manifest.train.size() + size_t(cfg.batch_size) - 1) /
                                     size_t(cfg.batch_size)));
    int64_t warmup = int64_t(std::llround(cfg.adv_warmup_frac * double(cfg.steps)));
    auto bcfg = budget_cfg(cfg);

    EpochAccumulator acc;
    acc.init(cfg.levels);
    int64_t epoch = 0;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<torch::Tensor> images;
        images.reserve(size_t(cfg.batch_size));
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            images.push_back(augment(manifest.train[order[cursor++]], aug, aug_rng).pixels);
        }
        auto x = torch::stack(images);

        double tau = temperature_schedule(step, cfg.steps, cfg.tau_start, cfg.tau_end);
        double lambda = lambda_schedule(step, cfg.steps, cfg.lambda_max, cfg.lambda_kind);
        bool adv_on = cfg.adv_weight > 0 && step >= warmup;

        opt_g.zero_grad();
        auto hierarchy = model.encoder->forward(x);
        auto budget = model.router->route(hierarchy, tau, noise_gen, RouteMode::train_soft);
        auto assembled = assemble(budget, hierarchy, model.codebook, cfg.straight_through);
        auto x_hat = model.decoder->forward(assembled.features);
        auto vq = vq_loss(x, x_hat, assembled.encoder_selected, assembled.codes_selected, cfg.beta);

        ContextRichness richness{batch_entropy(x, cfg.coarse_grid, false),
                                 batch_entropy(x, cfg.coarse_grid, true)};
        auto l_budget = budget_loss(budget, richness, bcfg);

        auto loss_g_total = vq.total + lambda * l_budget;
        torch::Tensor loss_d_val;
        if (adv_on) {
            auto adv = adversarial_losses(
                [&](const torch::Tensor& im) { return model.discriminator->forward(im); }, x,
                x_hat);
            loss_g_total = loss_g_total + cfg.adv_weight * adv.loss_g;
            loss_g_total.backward();
            opt_g.step();

            opt_d.zero_grad();
            adv.loss_d.backward();
            opt_d.step();
            loss_d_val = adv.loss_d.detach();
            acc.loss_g += adv.loss_g.item<double>();
        } else {
            loss_g_total.backward();
            opt_g.step();
        }

        double total_val = loss_g_total.item<double>();
        if (!std::isfinite(total_val)) {
            dump_divergence(log_dir, step,
                            {{"total", total_val},
                             {"recon", vq.reconstruction.item<double>()},
                             {"codebook", vq.codebook.item<double>()},
                             {"commitment", vq.commitment.item<double>()},
                             {"budget", l_budget.item<double>()}});
            throw NumericError("training loss is not finite at step " + std::to_string(step));
        }

        if (acc.steps == 0) {
            acc.lambda_first = lambda;
            acc.tau_first = tau;
        }
        acc.recon += vq.reconstruction.item<double>();
        acc.codebook += vq.codebook.item<double>();
        acc.commitment += vq.commitment.item<double>();
        acc.budget += l_budget.item<double>();
        if (loss_d_val.defined()) acc.loss_d += loss_d_val.item<double>();
        auto hard = budget.hard.reshape(-1);
        for (int64_t l = 0; l < cfg.levels; ++l) {
            acc.level_counts[size_t(l)] += (hard == l).sum().item<int64_t>();
            auto mask = budget.hard == l;
            int64_t repeat = model.finest_grid() / cfg.coarse_grid;  // unused marker
            (void)repeat;
            auto idx = assembled.per_level[size_t(l)].indices;
            // indices at level grid; count codes on selected cells only
            auto sel = mask.repeat_interleave(1 << l, 1).repeat_interleave(1 << l, 2);
            auto used = idx.masked_select(sel);
            auto* p = used.data_ptr<int64_t>();
            acc.codes_seen[size_t(l)].insert(p, p + used.numel());
        }
        acc.codes_used += assembled.codes_used;
        acc.images += cfg.batch_size;
        ++acc.steps;

        if ((step + 1) % steps_per_epoch == 0 || step + 1 == cfg.steps) {
            write_log_row(log, epoch, step, acc, cfg.codebook_size);
            acc = EpochAccumulator();
            acc.init(cfg.levels);
            ++epoch;
        }
    }

    model.train_mode(false);
    return model;
}

PriorTrainStats train_prior_stage(PvqaeModel& model, const DatasetManifest& manifest,
                                  const std::string& sequences_csv) {
    if (model.stage < 1) throw ConfigError("train_prior_stage: stage-1 checkpoint required");
    if (manifest.train.empty()) throw ConfigError("train_prior_stage: train split is empty");
    model.train_mode(false);

    // Freeze everything below the prior.
    for (auto* module : std::initializer_list<torch::nn::Module*>{
             model.encoder.get(), model.decoder.get(), model.discriminator.get(),
             model.codebook.get(), model.router.get()})
        for (auto& p : module->parameters()) p.set_requires_grad(false);

    auto order = flatten_order_from_string(model.cfg.flatten_order);
    std::vector<BudgetSequence> sequences;
    sequences.reserve(manifest.train.size());
    {
        torch::NoGradGuard no_grad;
        for (const auto& s : manifest.train) {
            auto h = model.encoder->forward(s.pixels.unsqueeze(0));
            auto budget = model.router->route(h, model.cfg.tau_end, std::nullopt,
                                              RouteMode::eval_hard);
            sequences.push_back(flatten_budget(budget.hard[0], model.prior_class_id(s.category),
                                               model.cfg.levels, order));
        }
    }

    if (!sequences_csv.empty()) {
        std::ofstream f(sequences_csv, std::ios::binary);
        if (!f) throw IoError("cannot write sequence dump: " + sequences_csv);
        f << "class_id,tokens\n";
        for (const auto& seq : sequences) {
            f << seq.class_id << ",";
            for (size_t i = 0; i < seq.tokens.size(); ++i)
                f << seq.tokens[i] << (i + 1 < seq.tokens.size() ? " " : "");
            f << "\n";
        }
    }

    torch::manual_seed(uint64_t(model.cfg.seed) + 11);
    model.attach_prior();
    model.prior->train(true);
    std::mt19937_64 rng(uint64_t(model.cfg.seed) + 5);
    auto stats = train_prior(model.prior, sequences, model.cfg.prior_steps, model.cfg.lr,
                             model.cfg.batch_size, rng);
    model.prior->train(false);
    return stats;
}

InferenceResult run_inference(PvqaeModel& model, const torch::Tensor& image, int64_t class_id) {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "run_inference expects 3 x S x S");
    torch::NoGradGuard no_grad;
    model.train_mode(false);

    InferenceResult out;
    auto x = image.unsqueeze(0);
    auto hierarchy = model.encoder->forward(x);
    out.budget = model.router->route(hierarchy, model.cfg.tau_end, std::nullopt,
                                     RouteMode::eval_hard);

    bool use_prior = model.stage >= 2 && model.prior;
    BudgetMap allocation = out.budget;
    if (use_prior) {
        auto fl_order = flatten_order_from_string(model.cfg.flatten_order);
        auto seq = flatten_budget(out.budget.hard[0], class_id, model.cfg.levels, fl_order);
        auto pred = predict_prior(model.prior, seq, fl_order);
        out.prior_levels = pred.levels;
        out.prior_dists = pred.distributions;
        allocation = BudgetMap{torch::Tensor(), pred.levels.unsqueeze(0), RouteMode::eval_hard};
    }

    auto assembled = assemble(allocation, hierarchy, model.codebook, /*gate_gradient=*/false);
    out.codes_used = assembled.codes_used;
    out.recon = model.decoder->forward(assembled.features)[0];

    auto srec = s_recon(image, out.recon);
    double sigma = model.cfg.effective_sigma();
    if (use_prior) {
        auto sp = s_prior(out.budget.soft[0], out.prior_dists);
        out.score = defect_score(sp, srec, sigma);
    } else {
        out.score = recon_only_score(srec, sigma);
    }
    return out;
}

MetricsReport evaluate(PvqaeModel& model, const DatasetManifest& manifest,
                       const std::string& csv_path) {
    if (manifest.test.empty()) throw ConfigError("evaluate: test split is empty");
    bool has_defect = false, has_normal = false;
    for (const auto& s : manifest.test) (s.defect ? has_defect : has_normal) = true;
    if (!has_defect || !has_normal)
        throw MetricError("evaluate: test split must contain both classes");

    struct Bucket {
        std::vector<double> image_scores;
        std::vector<int> image_labels;
        std::vector<double> pixel_scores;
        std::vector<int> pixel_labels;
    };
    std::map<std::string, Bucket> buckets;
    double cost_sum = 0.0;
    std::vector<std::set<int64_t>> codes_seen(size_t(model.cfg.levels));
    double c = model.cfg.effective_cost_factor();

    for (const auto& sample : manifest.test) {
        int64_t class_id = model.prior_class_id(sample.category);
        auto result = run_inference(model, sample.pixels, class_id);

        auto& bucket = buckets[sample.category];
        bucket.image_scores.push_back(result.score.image_score);
        bucket.image_labels.push_back(sample.defect ? 1 : 0);

        auto flat = result.score.s.reshape(-1).to(torch::kDouble);
        auto mask = sample.defect ? sample.mask.reshape(-1) : torch::zeros_like(flat);
        auto* ps = flat.data_ptr<double>();
        auto maskf = mask.to(torch::kDouble);
        auto* pm = maskf.data_ptr<double>();
        for (int64_t i = 0; i < flat.numel(); ++i) {
            bucket.pixel_scores.push_back(ps[i]);
            bucket.pixel_labels.push_back(pm[i] > 0.5 ? 1 : 0);
        }

        auto hard = result.budget.hard[0].reshape(-1);
        double cost = 0;
        auto* ph = hard.data_ptr<int64_t>();
        for (int64_t i = 0; i < hard.numel(); ++i) cost += std::pow(c, double(ph[i]));
        cost_sum += cost / double(hard.numel());
    }

    MetricsReport report;
    Bucket all;
    for (const auto& cat : manifest.categories) {
        auto it = buckets.find(cat);
        if (it == buckets.end()) continue;
        const auto& b = it->second;
        CategoryMetrics m;
        m.category = cat;
        m.image_auroc = auroc(b.image_scores, b.image_labels);
        m.pixel_auroc = auroc(b.pixel_scores, b.pixel_labels);
        m.n_images = int64_t(b.image_scores.size());
        m.n_pixels = int64_t(b.pixel_scores.size());
        report.per_category.push_back(m);
        all.image_scores.insert(all.image_scores.end(), b.image_scores.begin(),
                                b.image_scores.end());
        all.image_labels.insert(all.image_labels.end(), b.image_labels.begin(),
                                b.image_labels.end());
        all.pixel_scores.insert(all.pixel_scores.end(), b.pixel_scores.begin(),
                                b.pixel_scores.end());
        all.pixel_labels.insert(all.pixel_labels.end(), b.pixel_labels.begin(),
                                b.pixel_labels.end());
    }
    report.overall.category = "overall";
    report.overall.image_auroc = auroc(all.image_scores, all.image_labels);
    report.overall.pixel_auroc = auroc(all.pixel_scores, all.pixel_labels);
    report.overall.n_images = int64_t(all.image_scores.size());
    report.overall.n_pixels = int64_t(all.pixel_scores.size());
    report.mean_budget_cost = cost_sum / double(manifest.test.size());
    for (const auto& seen : codes_seen)
        report.code_utilization.push_back(double(seen.size()) / double(model.cfg.codebook_size));

    if (!csv_path.empty()) write_metrics_csv(csv_path, report);
    return report;
}

void infer_image(PvqaeModel& model, const std::string& image_path, const std::string& out_dir,
                 std::optional<double> thresh, const std::optional<std::string>& category) {
    auto image = read_image_rgb(image_path, model.cfg.image_size);
    int64_t class_id = 0;
    if (category.has_value()) {
        class_id = model.prior_class_id(*category);
    } else if (model.cfg.prior_per_class && model.categories.size() > 1) {
        std::cerr << "warning: no --category given; defaulting to '" << model.categories[0]
                  << "'\n";
    }

    auto result = run_inference(model, image, class_id);
    fs::create_directories(out_dir);
    write_heatmap_png((fs::path(out_dir) / "heatmap.png").string(), result.score.s);

    nlohmann::json sidecar;
    sidecar["image_score"] = result.score.image_score;
    sidecar["score_min"] = result.score.s.min().item<double>();
    sidecar["score_max"] = result.score.s.max().item<double>();
    auto hard = result.budget.hard[0];
    std::vector<std::vector<int64_t>> grid;
    for (int64_t r = 0; r < hard.size(0); ++r) {
        std::vector<int64_t> row;
        for (int64_t col = 0; col < hard.size(1); ++col)
            row.push_back(hard[r][col].item<int64_t>());
        grid.push_back(row);
    }
    sidecar["budget_levels"] = grid;
    if (result.prior_levels.defined()) {
        std::vector<std::vector<int64_t>> pg;
        for (int64_t r = 0; r < result.prior_levels.size(0); ++r) {
            std::vector<int64_t> row;
            for (int64_t col = 0; col < result.prior_levels.size(1); ++col)
                row.push_back(result.prior_levels[r][col].item<int64_t>());
            pg.push_back(row);
        }
        sidecar["prior_levels"] = pg;
    }
    std::ofstream js(fs::path(out_dir) / "result.json", std::ios::binary);
    if (!js) throw IoError("cannot write sidecar JSON under " + out_dir);
    js << sidecar.dump(2) << "\n";

    write_level_grid_csv((fs::path(out_dir) / "budget.csv").string(), hard);
    if (thresh.has_value()) {
        auto mask = threshold(result.score.s, *thresh);
        write_image_png((fs::path(out_dir) / "mask.png").string(), mask.unsqueeze(0));
    }
}

double mean_train_recon_mse(PvqaeModel& model, const DatasetManifest& manifest) {
    torch::NoGradGuard no_grad;
    model.train_mode(false);
    double total = 0;
    for (const auto& s : manifest.train) {
        auto x = s.pixels.unsqueeze(0);
        auto h = model.encoder->forward(x);
        auto budget = model.router->route(h, model.cfg.tau_end, std::nullopt, RouteMode::eval_hard);
        auto assembled = assemble(budget, h, model.codebook, false);
        auto x_hat = model.decoder->forward(assembled.features);
        total += (x_hat - x).square().mean().item<double>();
    }
    return total / double(manifest.train.size());
}

}  // namespace pvqae
