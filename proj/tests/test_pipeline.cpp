#include <torch/torch.h>

#include <filesystem>
#include <fstream>

#include "pvqae/common.hpp"
#include "pvqae/trainer.hpp"

namespace fs = std::filesystem;
#include "doctest_compat.hpp"

using namespace pvqae;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("pvqae_pipe_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.image_size = 32;
    cfg.coarse_grid = 4;
    cfg.levels = 2;
    cfg.codebook_size = 32;
    cfg.embed_dim = 16;
    cfg.base_channels = 16;
    cfg.steps = 30;
    cfg.batch_size = 4;
    cfg.prior_steps = 60;
    cfg.hflip_prob = 0.0;
    cfg.jitter_strength = 0.05;
    cfg.seed = 9;
    return cfg;
}

SynthSpec tiny_spec() {
    SynthSpec spec;
    spec.n_train = 12;
    spec.n_test_normal = 6;
    spec.n_test_defect = 6;
    spec.image_size = 32;
    spec.n_classes = 2;
    spec.seed = 77;
    return spec;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("pipeline: stage-1 + prior + eval + infer") {
    TempDir tmp("full");
    auto manifest = synth_texture_dataset(tiny_spec());
    auto cfg = tiny_config();

    auto model = train_stage1(cfg, manifest, (tmp.path / "logs").string());
    CHECK(fs::is_regular_file(tmp.path / "logs" / "train_log.csv"));
    auto log_text = slurp(tmp.path / "logs" / "train_log.csv");
    CHECK(log_text.find("epoch,step,recon") == 0);

    SUBCASE("checkpoint round-trip preserves forward outputs exactly") {
        auto ckpt = (tmp.path / "stage1.pt").string();
        save_checkpoint(ckpt, model);
        auto reloaded = load_checkpoint(ckpt);
        CHECK(reloaded.stage == 1);
        CHECK(to_toml(reloaded.cfg) == to_toml(model.cfg));
        CHECK(reloaded.categories == model.categories);

        auto x = manifest.test[0].pixels;
        auto a = run_inference(model, x, 0);
        auto b = run_inference(reloaded, x, 0);
        CHECK(torch::equal(a.recon, b.recon));
        CHECK(torch::equal(a.budget.hard, b.budget.hard));
        CHECK(a.score.image_score == b.score.image_score);
    }

    SUBCASE("prior stage freezes stage-1 weights and advances the stage flag") {
        auto hash_before = stage1_param_hash(model);
        auto stats = train_prior_stage(model, manifest, (tmp.path / "seqs.csv").string());
        CHECK(model.stage == 2);
        CHECK(stage1_param_hash(model) == hash_before);
        CHECK(stats.final_loss < stats.first_epoch_loss + 1.0);  // trained, not diverged
        CHECK(fs::is_regular_file(tmp.path / "seqs.csv"));
        auto seq_text = slurp(tmp.path / "seqs.csv");
        CHECK(seq_text.find("class_id,tokens") == 0);
        // one row per train sample plus header
        CHECK(std::count(seq_text.begin(), seq_text.end(), '\n') ==
              int64_t(manifest.train.size()) + 1);

        auto ckpt2 = (tmp.path / "stage2.pt").string();
        save_checkpoint(ckpt2, model);
        auto reloaded = load_checkpoint(ckpt2);
        CHECK(reloaded.stage == 2);
        REQUIRE(reloaded.prior);

        SUBCASE("evaluation is deterministic and reports one row per category plus overall") {
            auto csv_a = (tmp.path / "report_a.csv").string();
            auto csv_b = (tmp.path / "report_b.csv").string();
            auto report = evaluate(reloaded, manifest, csv_a);
            evaluate(reloaded, manifest, csv_b);
            CHECK(slurp(csv_a) == slurp(csv_b));
            CHECK(report.per_category.size() == manifest.categories.size());
            CHECK(report.overall.n_images == int64_t(manifest.test.size()));
            for (const auto& row : report.per_category) {
                CHECK(row.image_auroc >= 0.0);
                CHECK(row.image_auroc <= 1.0);
                CHECK(row.pixel_auroc >= 0.0);
                CHECK(row.pixel_auroc <= 1.0);
            }
            // stage-2 scoring exposes the prior cells
            auto r = run_inference(reloaded, manifest.test[0].pixels, 0);
            CHECK(r.score.s_prior_cells.defined());
            CHECK(r.prior_levels.defined());
        }

        SUBCASE("infer writes heatmap, sidecar JSON, budget CSV, and mask") {
            TempDir data_tmp("tree");
            write_manifest_tree(manifest, data_tmp.path.string());
            auto image_path =
                (data_tmp.path / "class_0" / "test" / "defect" / "0000.png").string();
            infer_image(reloaded, image_path, (tmp.path / "infer").string(), 1e9,
                        std::string("class_0"));
            CHECK(fs::is_regular_file(tmp.path / "infer" / "heatmap.png"));
            CHECK(fs::is_regular_file(tmp.path / "infer" / "budget.csv"));
            auto json_text = slurp(tmp.path / "infer" / "result.json");
            CHECK(json_text.find("image_score") != std::string::npos);
            // threshold far above the max score: the mask PNG must be all zeros
            auto mask = read_mask_png((tmp.path / "infer" / "mask.png").string(), 32);
            CHECK(mask.sum().item<double>() == 0.0);

            // repeated inference yields the identical sidecar
            infer_image(reloaded, image_path, (tmp.path / "infer2").string(), std::nullopt,
                        std::string("class_0"));
            auto j1 = slurp(tmp.path / "infer" / "result.json");
            auto j2 = slurp(tmp.path / "infer2" / "result.json");
            CHECK(j2.find("image_score") != std::string::npos);
        }
    }

    SUBCASE("stage-1 evaluation scores with reconstruction only") {
        auto report = evaluate(model, manifest);
        CHECK(report.per_category.size() == 2);
        auto r = run_inference(model, manifest.test[0].pixels, 0);
        CHECK(!r.score.s_prior_cells.defined());
        CHECK(!r.prior_levels.defined());
    }
}

TEST_CASE("pipeline: training rejects bad manifests") {
    auto cfg = tiny_config();
    DatasetManifest empty;
    empty.image_size = 32;
    CHECK_THROWS_AS(train_stage1(cfg, empty, ""), ConfigError);

    auto manifest = synth_texture_dataset(tiny_spec());
    auto defect = manifest.test[1];
    REQUIRE(manifest.test[1].defect == false);
    // plant a defect into train
    manifest.train.push_back(manifest.test.back());
    CHECK_THROWS_AS(train_stage1(cfg, manifest, ""), IntegrityError);
}

TEST_CASE("pipeline: evaluation requires both classes") {
    auto manifest = synth_texture_dataset(tiny_spec());
    auto cfg = tiny_config();
    cfg.steps = 2;
    auto model = train_stage1(cfg, manifest, "");
    DatasetManifest single = manifest;
    single.test.erase(std::remove_if(single.test.begin(), single.test.end(),
                                     [](const ImageSample& s) { return s.defect; }),
                      single.test.end());
    CHECK_THROWS_AS(evaluate(model, single), MetricError);
}

TEST_CASE("pipeline: lambda is logged as zero at step 0 for the linear schedule") {
    TempDir tmp("lambda");
    auto manifest = synth_texture_dataset(tiny_spec());
    auto cfg = tiny_config();
    cfg.steps = 6;
    cfg.lambda_kind = "linear";
    train_stage1(cfg, manifest, tmp.path.string());
    auto text = slurp(tmp.path / "train_log.csv");
    // first data row, lambda column (9th, 0-based 8)
    auto line_start = text.find('\n') + 1;
    auto line = text.substr(line_start, text.find('\n', line_start) - line_start);
    std::vector<std::string> cols;
    size_t pos = 0;
    while (pos != std::string::npos) {
        auto next = line.find(',', pos);
        cols.push_back(line.substr(pos, next == std::string::npos ? next : next - pos));
        pos = next == std::string::npos ? next : next + 1;
    }
    REQUIRE(cols.size() > 9);
    CHECK(std::stod(cols[8]) == 0.0);

    SUBCASE("constant schedule logs lambda_max everywhere") {
        TempDir tmp2("lambda_const");
        cfg.lambda_kind = "constant";
        train_stage1(cfg, manifest, tmp2.path.string());
        auto text2 = slurp(tmp2.path / "train_log.csv");
        std::istringstream rows(text2);
        std::string row;
        std::getline(rows, row);  // header
        while (std::getline(rows, row)) {
            std::vector<std::string> c2;
            size_t p = 0;
            while (p != std::string::npos) {
                auto next = row.find(',', p);
                c2.push_back(row.substr(p, next == std::string::npos ? next : next - p));
                p = next == std::string::npos ? next : next + 1;
            }
            REQUIRE(c2.size() > 9);
            CHECK(std::stod(c2[8]) == doctest::Approx(cfg.lambda_max));
        }
    }
}
